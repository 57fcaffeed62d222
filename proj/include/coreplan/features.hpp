#pragma once

// Feature maps, core state-action sets and the approximation-error
// functionals (Q-approximation error, inherent Bellman error) used to judge
// how well a feature map fits an MDP.

#include <cstdint>
#include <optional>
#include <vector>

#include "coreplan/common.hpp"
#include "coreplan/mdp.hpp"

namespace coreplan {

/// Feature matrix with one row phi(x,a) per state-action pair (x-major).
struct FeatureMap {
    Matrix phi;          // (X*A) x d
    double radius = 0.0; // R >= max_z ||phi(z)||_2

    Index dim() const { return static_cast<Index>(phi.cols()); }
    Index num_pairs() const { return static_cast<Index>(phi.rows()); }
    const double* row(Index z) const { return phi.data() + z * dim(); }

    void validate() const;

    /// Wraps phi with radius set to the largest row norm.
    static FeatureMap from_matrix(Matrix phi);
    /// Identity features, d = X*A.
    static FeatureMap tabular(Index num_pairs);
};

/// A core set together with its interpolation matrix and the residual of
/// representing every feature vector as a convex combination of core features.
struct CoreSet {
    std::vector<Index> core_indices;  // m distinct pair indices
    Matrix interp;                    // B: (X*A) x m, row-stochastic
    Matrix delta_core;                // Phi - B U Phi
    Vector eps_core;                  // row 2-norms of delta_core

    Index size() const { return core_indices.size(); }

    /// U: m x (X*A) 0/1 row selector.
    Matrix selection(Index num_pairs) const;
    /// U^T lambda as a dense state-action vector.
    Vector lift(const Vector& lambda, Index num_pairs) const;
    /// U v: entries of v at the core pairs.
    Vector restrict(const Vector& v) const;
};

/// P = Phi W and r = Phi vartheta.
struct LinearMdpWitness {
    Matrix w;         // d x X
    Vector vartheta;  // d

    /// Exact Q-function parameter of a policy with state values v:
    /// theta = vartheta + gamma W v.
    Vector q_parameter(double gamma, const Vector& v) const { return vartheta + gamma * (w * v); }
};

struct LinearMdpInstance {
    Mdp mdp;
    FeatureMap features;
    LinearMdpWitness witness;
    CoreSet core;
};

CoreSet compute_core_residual(const FeatureMap& phi, std::vector<Index> core_indices, Matrix interp);

/// Fits simplex interpolation weights for every pair by projected-gradient
/// least squares over the core features (accelerated, with restarts and an
/// exact solve on the detected support). A pair that is itself in the core
/// set gets the indicator of its own index.
CoreSet fit_interpolation(const FeatureMap& phi, const std::vector<Index>& core_indices);

/// Euclidean projection onto the probability simplex.
Vector project_simplex(const Vector& v);

struct GeneratorOptions {
    double gamma = 0.9;
};

/// Random linear MDP with an exact planted core set (eps_core == 0).
LinearMdpInstance gen_linear_mdp(std::uint64_t seed, Index num_states, Index num_actions, Index dim,
                                 const GeneratorOptions& opts = {});

/// Toggle MDP with identity features and the full core set.
LinearMdpInstance toggle_instance(double gamma);

/// sqrt(d) * (1 + gamma / (1 - gamma)).
double default_radius(Index dim, double gamma);

/// Best-effort Chebyshev fit min_{||theta|| <= radius} ||target - Phi theta||_inf.
struct ChebyshevFit {
    Vector theta;
    double error = 0.0;  // achieved sup-norm residual: an upper bound of the infimum
    bool used_fallback = false;
    Index iterations = 0;
};

struct ChebyshevOptions {
    Index max_lawson_iterations = 2000;
    double stationarity_tol = 1e-8;
    Index fallback_iterations = 10000;
};

ChebyshevFit chebyshev_fit(const Matrix& phi, const Vector& target, double radius,
                           const ChebyshevOptions& opts = {});

struct QApproxResult {
    double eps_pi = 0.0;
    Vector theta_star;
    bool used_fallback = false;
};

/// Q-approximation error of a policy over the radius-D ball (upper bound).
QApproxResult q_approx_error(const Mdp& mdp, const FeatureMap& phi, const Policy& policy,
                             double radius, const ChebyshevOptions& opts = {});

/// Inherent Bellman error estimate: sampled random policies and random theta'
/// on the radius sphere, inner infimum by chebyshev_fit, maximum over samples.
/// Lower bound of the supremum; each inner term is an upper bound of its
/// infimum.
double ibe_estimate(const Mdp& mdp, const FeatureMap& phi, double radius, Index n_policies,
                    std::uint64_t seed, const ChebyshevOptions& opts = {});

/// r + gamma P M^pi (Phi theta'), the target of one inner IBE infimum.
Vector bellman_target(const Mdp& mdp, const FeatureMap& phi, const Policy& policy,
                      const Vector& theta_next);

}  // namespace coreplan
