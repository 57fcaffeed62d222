#include "coreplan/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "coreplan/kernels.hpp"
#include "coreplan/sampling.hpp"

namespace coreplan {
namespace {

constexpr double kStochasticTol = 1e-12;

double simplex_objective(const Matrix& gram, const Vector& lin, const Vector& b) {
    return 0.5 * b.dot(gram * b) - lin.dot(b);
}

// Gradient-mapping norm L * ||b - P(b - grad/L)||, zero exactly at the optimum.
double gradient_mapping(const Matrix& gram, const Vector& lin, const Vector& b, double lip) {
    const Vector grad = gram * b - lin;
    return lip * (b - project_simplex(b - grad / lip)).norm();
}

// Equality-constrained least squares on a fixed support; returns nothing if
// the solution leaves the simplex.
std::optional<Vector> solve_on_support(const Matrix& gram, const Vector& lin, const Vector& b) {
    std::vector<Index> support;
    for (Index i = 0; i < static_cast<Index>(b.size()); ++i)
        if (b[i] > 1e-12)
            support.push_back(i);
    const Index s = support.size();
    if (s == 0)
        return std::nullopt;
    Matrix kkt = Matrix::Zero(s + 1, s + 1);
    Vector rhs(s + 1);
    for (Index i = 0; i < s; ++i) {
        for (Index j = 0; j < s; ++j)
            kkt(i, j) = gram(support[i], support[j]);
        kkt(i, s) = 1.0;
        kkt(s, i) = 1.0;
        rhs[i] = lin[support[i]];
    }
    rhs[s] = 1.0;
    const Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    Vector out = Vector::Zero(b.size());
    for (Index i = 0; i < s; ++i) {
        if (!(sol[i] >= 0.0))
            return std::nullopt;
        out[support[i]] = sol[i];
    }
    if (std::abs(out.sum() - 1.0) > 1e-12)
        return std::nullopt;
    return out;
}

Vector fit_simplex_weights(const Matrix& gram, const Vector& lin, double lip) {
    const Index m = static_cast<Index>(lin.size());
    Vector b = Vector::Constant(m, 1.0 / static_cast<double>(m));
    if (m == 1 || lip <= 0.0)
        return b;

    // FISTA with function-value restart.
    Vector y = b;
    double t = 1.0;
    double f_prev = simplex_objective(gram, lin, b);
    for (Index it = 0; it < 50000; ++it) {
        const Vector next = project_simplex(y - (gram * y - lin) / lip);
        const double f_next = simplex_objective(gram, lin, next);
        if (f_next > f_prev) {
            y = b;
            t = 1.0;
            continue;
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        y = next + ((t - 1.0) / t_next) * (next - b);
        b = next;
        t = t_next;
        f_prev = f_next;
        if (it % 16 == 0 && gradient_mapping(gram, lin, b, lip) <= 1e-9)
            break;
    }

    if (auto polished = solve_on_support(gram, lin, b)) {
        if (simplex_objective(gram, lin, *polished) <= simplex_objective(gram, lin, b) + 1e-15)
            b = *polished;
    }
    return b;
}

Vector row_norms(const Matrix& m) {
    Vector out(m.rows());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        out[r] = m.row(r).norm();
    return out;
}

Vector project_ball(const Vector& theta, double radius) {
    const double n = theta.norm();
    return n <= radius ? theta : Vector(theta * (radius / n));
}

double sup_residual(const Matrix& phi, const Vector& target, const Vector& theta) {
    return (target - phi * theta).cwiseAbs().maxCoeff();
}

}  // namespace

void FeatureMap::validate() const {
    require(phi.rows() > 0 && phi.cols() > 0, "FeatureMap: empty feature matrix");
    for (Eigen::Index r = 0; r < phi.rows(); ++r)
        require(phi.row(r).norm() <= radius + 1e-12,
                "FeatureMap: row " + std::to_string(r) + " exceeds the radius R");
}

FeatureMap FeatureMap::from_matrix(Matrix phi) {
    FeatureMap f;
    f.radius = phi.rows() > 0 ? row_norms(phi).maxCoeff() : 0.0;
    f.phi = std::move(phi);
    return f;
}

FeatureMap FeatureMap::tabular(Index num_pairs) {
    return from_matrix(Matrix::Identity(num_pairs, num_pairs));
}

Matrix CoreSet::selection(Index num_pairs) const {
    Matrix u = Matrix::Zero(size(), num_pairs);
    for (Index i = 0; i < size(); ++i)
        u(i, core_indices[i]) = 1.0;
    return u;
}

Vector CoreSet::lift(const Vector& lambda, Index num_pairs) const {
    require(static_cast<Index>(lambda.size()) == size(), "CoreSet::lift: lambda must have length m");
    Vector out = Vector::Zero(num_pairs);
    for (Index i = 0; i < size(); ++i)
        out[core_indices[i]] += lambda[i];
    return out;
}

Vector CoreSet::restrict(const Vector& v) const {
    Vector out(size());
    for (Index i = 0; i < size(); ++i)
        out[i] = v[core_indices[i]];
    return out;
}

Vector project_simplex(const Vector& v) {
    const Index n = static_cast<Index>(v.size());
    std::vector<double> s(v.data(), v.data() + n);
    std::sort(s.begin(), s.end(), std::greater<>());
    double cum = 0.0, tau = 0.0;
    for (Index k = 0; k < n; ++k) {
        cum += s[k];
        const double cand = (cum - 1.0) / static_cast<double>(k + 1);
        if (s[k] - cand > 0.0)
            tau = cand;
    }
    return (v.array() - tau).max(0.0).matrix();
}

CoreSet compute_core_residual(const FeatureMap& phi, std::vector<Index> core_indices, Matrix interp) {
    const Index Z = phi.num_pairs();
    const Index m = core_indices.size();
    require(m >= 1, "compute_core_residual: core set must be nonempty");
    std::vector<Index> sorted = core_indices;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
            "compute_core_residual: core indices must be distinct");
    require(sorted.back() < Z, "compute_core_residual: core index out of range");
    require(static_cast<Index>(interp.rows()) == Z && static_cast<Index>(interp.cols()) == m,
            "compute_core_residual: interpolation matrix must be (X*A) x m");
    for (Index z = 0; z < Z; ++z) {
        double s = 0.0;
        for (Index i = 0; i < m; ++i) {
            require(interp(z, i) >= 0.0, "compute_core_residual: interpolation row has a negative entry");
            s += interp(z, i);
        }
        require(std::abs(s - 1.0) <= kStochasticTol,
                "compute_core_residual: interpolation row " + std::to_string(z) + " is not stochastic");
    }

    CoreSet core;
    core.core_indices = std::move(core_indices);
    Matrix core_phi(m, phi.dim());
    for (Index i = 0; i < m; ++i)
        core_phi.row(i) = phi.phi.row(core.core_indices[i]);
    core.delta_core = phi.phi - interp * core_phi;
    core.eps_core = row_norms(core.delta_core);
    core.interp = std::move(interp);
    return core;
}

CoreSet fit_interpolation(const FeatureMap& phi, const std::vector<Index>& core_indices) {
    const Index Z = phi.num_pairs();
    const Index m = core_indices.size();
    require(m >= 1, "fit_interpolation: core set must be nonempty");
    for (Index c : core_indices)
        require(c < Z, "fit_interpolation: core index out of range");

    Matrix core_phi(m, phi.dim());
    for (Index i = 0; i < m; ++i)
        core_phi.row(i) = phi.phi.row(core_indices[i]);
    const Matrix gram = core_phi * core_phi.transpose();
    const double lip = m > 1 ? Eigen::SelfAdjointEigenSolver<Matrix>(gram, Eigen::EigenvaluesOnly)
                                   .eigenvalues()
                                   .maxCoeff()
                             : 0.0;

    Matrix interp = Matrix::Zero(Z, m);
    for (Index z = 0; z < Z; ++z) {
        const auto own = std::find(core_indices.begin(), core_indices.end(), z);
        if (own != core_indices.end()) {
            interp(z, own - core_indices.begin()) = 1.0;
            continue;
        }
        const Vector lin = core_phi * phi.phi.row(z).transpose();
        interp.row(z) = fit_simplex_weights(gram, lin, lip).transpose();
        interp.row(z) /= interp.row(z).sum();
    }
    return compute_core_residual(phi, core_indices, std::move(interp));
}

double default_radius(Index dim, double gamma) {
    return std::sqrt(static_cast<double>(dim)) * (1.0 + gamma / (1.0 - gamma));
}

LinearMdpInstance gen_linear_mdp(std::uint64_t seed, Index num_states, Index num_actions, Index dim,
                                 const GeneratorOptions& opts) {
    require(num_states >= 1 && num_actions >= 1 && dim >= 1,
            "gen_linear_mdp: states, actions and dim must be at least 1");
    const Index Z = num_states * num_actions;
    require(dim <= Z, "gen_linear_mdp: dim must not exceed states*actions (d <= X*A)");

    RandomStream rng(seed, StreamId::generator);
    Matrix phi(Z, dim);
    for (Index z = 0; z < Z; ++z)
        phi.row(z) = dirichlet_ones(rng, dim).transpose();

    // Plant basis vectors at d distinct pairs (partial Fisher-Yates).
    std::vector<Index> perm(Z);
    std::iota(perm.begin(), perm.end(), Index{0});
    for (Index k = 0; k < dim; ++k)
        std::swap(perm[k], perm[k + rng.uniform_index(Z - k)]);
    std::vector<Index> planted(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(dim));
    for (Index k = 0; k < dim; ++k) {
        phi.row(planted[k]).setZero();
        phi(planted[k], k) = 1.0;
    }

    LinearMdpInstance inst;
    inst.witness.w.resize(dim, num_states);
    for (Index k = 0; k < dim; ++k)
        inst.witness.w.row(k) = dirichlet_ones(rng, num_states).transpose();
    inst.witness.vartheta.resize(dim);
    for (Index k = 0; k < dim; ++k)
        inst.witness.vartheta[k] = rng.uniform();

    Mdp& mdp = inst.mdp;
    mdp.num_states = num_states;
    mdp.num_actions = num_actions;
    mdp.gamma = opts.gamma;
    mdp.nu0 = dirichlet_ones(rng, num_states);
    mdp.transition = phi * inst.witness.w;
    mdp.reward = phi * inst.witness.vartheta;
    mdp.validate();

    inst.features = FeatureMap::from_matrix(phi);
    // Every phi(z) is on the simplex, so its own coordinates are the convex
    // weights over the planted basis pairs.
    inst.core = compute_core_residual(inst.features, planted, phi);
    return inst;
}

LinearMdpInstance toggle_instance(double gamma) {
    LinearMdpInstance inst;
    inst.mdp = toggle_mdp(gamma);
    const Index Z = inst.mdp.num_pairs();
    inst.features = FeatureMap::tabular(Z);
    inst.witness.w = inst.mdp.transition;
    inst.witness.vartheta = inst.mdp.reward;
    std::vector<Index> all(Z);
    std::iota(all.begin(), all.end(), Index{0});
    inst.core = compute_core_residual(inst.features, all, Matrix::Identity(Z, Z));
    return inst;
}

ChebyshevFit chebyshev_fit(const Matrix& phi, const Vector& target, double radius,
                           const ChebyshevOptions& opts) {
    require(radius > 0.0, "chebyshev_fit: radius must be positive");
    require(phi.rows() == target.size(), "chebyshev_fit: target length must match the feature rows");
    const Eigen::Index n = phi.rows();

    // Lawson's iteratively reweighted least squares. The weighted LS residual
    // with normalized weights is a lower bound on the unconstrained optimum,
    // which gives the stopping certificate.
    Vector w = Vector::Constant(n, 1.0 / static_cast<double>(n));
    ChebyshevFit best_any, best_feasible;
    best_any.error = best_feasible.error = std::numeric_limits<double>::infinity();
    Index it = 0;
    for (; it < opts.max_lawson_iterations; ++it) {
        const Vector sw = w.cwiseSqrt();
        const Matrix aw = sw.asDiagonal() * phi;
        const Vector theta = aw.completeOrthogonalDecomposition().solve(sw.cwiseProduct(target));
        const Vector resid = target - phi * theta;
        const double err = resid.cwiseAbs().maxCoeff();
        if (err < best_any.error) {
            best_any.theta = theta;
            best_any.error = err;
        }
        if (theta.norm() <= radius && err < best_feasible.error) {
            best_feasible.theta = theta;
            best_feasible.error = err;
        }
        const double lower = std::sqrt(std::max(0.0, w.dot(resid.cwiseAbs2())));
        if (best_any.error - lower <= opts.stationarity_tol * std::max(1.0, best_any.error))
            break;
        Vector next = w.cwiseProduct(resid.cwiseAbs());
        const double s = next.sum();
        if (!(s > 0.0))
            break;
        w = next / s;
    }

    if (best_any.theta.norm() <= radius) {
        best_any.iterations = it;
        return best_any;
    }

    // Ball constraint active: projected subgradient on the max-abs objective
    // with step radius/sqrt(k), keeping the best iterate.
    ChebyshevFit out;
    out.used_fallback = true;
    out.theta = project_ball(best_any.theta, radius);
    out.error = sup_residual(phi, target, out.theta);
    if (best_feasible.error < out.error) {
        out.theta = best_feasible.theta;
        out.error = best_feasible.error;
    }
    Vector theta = out.theta;
    for (Index k = 1; k <= opts.fallback_iterations; ++k) {
        const Vector resid = target - phi * theta;
        Eigen::Index worst = 0;
        resid.cwiseAbs().maxCoeff(&worst);
        const double sign = resid[worst] > 0.0 ? 1.0 : -1.0;
        // d/dtheta |target_i - phi_i theta| = -sign * phi_i
        const Vector grad = -sign * phi.row(worst).transpose();
        theta = project_ball(theta - (radius / std::sqrt(static_cast<double>(k))) * grad, radius);
        const double err = sup_residual(phi, target, theta);
        if (err < out.error) {
            out.error = err;
            out.theta = theta;
        }
    }
    out.iterations = it + opts.fallback_iterations;
    return out;
}

QApproxResult q_approx_error(const Mdp& mdp, const FeatureMap& phi, const Policy& policy, double radius,
                             const ChebyshevOptions& opts) {
    require(radius > 0.0, "q_approx_error: D_gamma must be positive");
    require(phi.num_pairs() == mdp.num_pairs(), "q_approx_error: feature rows must match X*A");
    const ExactQuantities ex = evaluate_policy(mdp, policy);
    const ChebyshevFit fit = chebyshev_fit(phi.phi, ex.q_pi, radius, opts);
    return {fit.error, fit.theta, fit.used_fallback};
}

Vector bellman_target(const Mdp& mdp, const FeatureMap& phi, const Policy& policy,
                      const Vector& theta_next) {
    const Vector q_next = phi.phi * theta_next;
    return mdp.reward + mdp.gamma * apply_transition(mdp, mean_operator(policy, q_next));
}

double ibe_estimate(const Mdp& mdp, const FeatureMap& phi, double radius, Index n_policies,
                    std::uint64_t seed, const ChebyshevOptions& opts) {
    require(n_policies >= 1, "ibe_estimate: n_policies must be at least 1");
    require(radius > 0.0, "ibe_estimate: D_gamma must be positive");
    require(phi.num_pairs() == mdp.num_pairs(), "ibe_estimate: feature rows must match X*A");
    RandomStream rng(seed, StreamId::estimator);
    const Index X = mdp.num_states, A = mdp.num_actions, d = phi.dim();
    double worst = 0.0;
    for (Index s = 0; s < n_policies; ++s) {
        Policy pi;
        pi.probs.resize(X, A);
        for (Index x = 0; x < X; ++x)
            pi.probs.row(x) = dirichlet_ones(rng, A).transpose();
        Vector theta_next(d);
        for (Index k = 0; k < d; ++k)
            theta_next[k] = rng.normal();
        theta_next *= radius / theta_next.norm();
        const Vector target = bellman_target(mdp, phi, pi, theta_next);
        worst = std::max(worst, chebyshev_fit(phi.phi, target, radius, opts).error);
    }
    return worst;
}

}  // namespace coreplan
