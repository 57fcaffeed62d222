#pragma once

// Dense, exact evaluation of everything the planner computes implicitly:
// Lagrangian values, exact gradients, occupancy-based suboptimality, the
// dynamic duality gap and its decomposition, relaxed-LP optimality
// certificates and regret audits for the three online learners.
//
// Nothing here reuses the planner's samplers or its lazy V_t evaluation; the
// per-round iterates are rebuilt from a RunTrace with plain matrix algebra.

#include <optional>
#include <string>
#include <vector>

#include "coreplan/common.hpp"
#include "coreplan/features.hpp"
#include "coreplan/mdp.hpp"
#include "coreplan/planner.hpp"

namespace coreplan {

/// (lambda, u; theta, V) with lambda in the core simplex, u in the pair
/// simplex, ||theta||_2 <= D and ||V||_inf <= R D.
struct SaddlePoint {
    Vector lambda;
    Vector u;
    Vector theta;
    Vector v;
};

/// Throws ContractError naming the first violated domain constraint.
void check_domain(const SaddlePoint& p, Index m, Index num_pairs, Index num_states, double radius_R,
                  double D_gamma);

/// <lambda, U(r + gamma P V - Phi theta)> + (1-gamma)<nu0, V> + <u, Phi theta - E V>.
/// Checks the domain first.
double lagrangian(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const SaddlePoint& p,
                  double D_gamma);

/// Same expression without the domain check (comparators outside the ball).
double lagrangian_unchecked(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                            const SaddlePoint& p);

/// nu_t = gamma P^T U^T lambda + (1-gamma) nu0 and u_t = nu_t o pi_t.
struct ImplicitIterates {
    Vector nu;
    Vector u;
};

ImplicitIterates implicit_iterates(const Mdp& mdp, const CoreSet& core, const Vector& lambda,
                                   const Policy& policy);

/// Phi^T u_t - Phi^T U^T lambda_t.
Vector exact_grad_theta(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const Vector& lambda,
                        const Policy& policy);

/// U[r + gamma P V_t - Q_t] with Q_t = Phi theta and V_t = M^pi Q_t.
Vector exact_grad_lambda(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const Vector& theta,
                         const Policy& policy);

/// <mu* - mu^pi, r>.
double suboptimality(const Mdp& mdp, const Policy& policy);
double suboptimality(const Mdp& mdp, const OptimalSolution& opt, const Policy& policy);

/// sum_x nu(x) KL(pi(.|x) || ref(.|x)).
double conditional_relative_entropy(const Vector& nu, const Policy& pi, const Policy& ref);

/// KL(p || q) for distributions; +inf when p puts mass where q has none.
double kl_divergence(const Vector& p, const Vector& q);

// ---------------------------------------------------------------------------
// Rebuilding the run
// ---------------------------------------------------------------------------

/// Round t of a run with every implicit quantity made explicit.
struct RoundState {
    Vector lambda;   // lambda_t
    Vector theta;    // theta_t
    Policy policy;   // pi_t, from Theta_t = theta_1 + ... + theta_{t-1}
    Vector q;        // Q_t = Phi theta_t
    Vector v;        // V_t = M^{pi_t} Q_t
    Vector nu;       // nu_t
    Vector u;        // u_t
};

std::vector<RoundState> reconstruct_rounds(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                           const RunTrace& trace, double beta);

// ---------------------------------------------------------------------------
// Dynamic duality gap
// ---------------------------------------------------------------------------

struct GapRound {
    std::uint64_t t = 0;
    double L_left = 0.0;   // L(lambda*, u*; theta_t, V_t)
    double L_right = 0.0;  // L(lambda_t, u_t; theta*_t, V*_t)
    double L_mid = 0.0;    // L(lambda_t, u_t; theta_t, V_t)
    double subopt = 0.0;   // <mu* - mu^{pi_t}, r>
    double eps_pi = 0.0;   // sup-norm error of Phi theta*_t against Q^{pi_t}
};

struct DualityGapReport {
    double gap = 0.0;
    double primal_regret = 0.0;
    double dual_dynamic_regret = 0.0;
    double mean_subopt = 0.0;
    double mean_eps_pi = 0.0;
    std::vector<GapRound> rounds;

    Vector lambda_star;  // B^T mu*
    Vector mu_star;      // u*
    std::vector<Vector> theta_star;
    std::vector<Vector> v_star;
    bool witness_comparators = false;   // theta*_t from the linear-MDP witness
    bool comparators_in_domain = true;  // every theta*_t and V*_t inside the ball / box
};

/// Comparators: lambda* = B^T mu*, u* = mu*, V*_t = V^{pi_t}. theta*_t is
/// the witness parameter when a witness is supplied, else the Chebyshev fit
/// of Q^{pi_t} over the D-ball. Expectations over J are full averages.
DualityGapReport dynamic_duality_gap(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                     const RunTrace& trace, double beta, double D_gamma,
                                     const LinearMdpWitness* witness = nullptr,
                                     const ChebyshevOptions& opts = {});

// ---------------------------------------------------------------------------
// Relaxed-LP certificates
// ---------------------------------------------------------------------------

struct CertificateReport {
    double primal_residual = 0.0;  // flow and feature-matching equalities, sup-norm
    double dual_residual = 0.0;    // largest violation of the two inequality blocks
    double objective_gap = 0.0;    // |<lambda, U r> - (1-gamma)<nu0, V*>|
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    double flow_residual = 0.0;
    double feature_residual = 0.0;
    double value_residual = 0.0;     // max(Phi theta - E V, 0)
    double core_bellman_residual = 0.0;  // max(U(r + gamma P V) - U Phi theta, 0)
    double q_fit_residual = 0.0;     // ||Phi theta* - Q*||_inf
    bool passed = false;
    std::vector<std::string> violations;
};

/// Primal candidate (B^T mu*, mu*) and dual candidate (V*, theta* with
/// Phi theta* = Q*) checked against the relaxed LP. theta* comes from the
/// witness when given, else from a least-squares solve of Phi theta = Q*.
CertificateReport certificate_check_relaxed_lp(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                               const LinearMdpWitness* witness, double tol);

// ---------------------------------------------------------------------------
// Regret audits
// ---------------------------------------------------------------------------

struct OmdRegretReport {
    double best_fixed_regret = 0.0;  // against the best vertex in hindsight
    Index best_index = 0;
    double best_fixed_bound = 0.0;   // KL(e_best || omega_1)/tau + tau n G^2 / 2
    std::vector<double> comparator_regrets;
    std::vector<double> comparator_bounds;
    double margin = 0.0;             // min over reported comparators of bound - regret
};

/// Regret of an exponentiated-gradient sequence omega_1..omega_n against the
/// gain vectors g_1..g_n. G bounds the sup-norm of the stochastic gains that
/// drove the updates; a supplied g with larger sup-norm is a contract error.
OmdRegretReport omd_regret_audit(const std::vector<Vector>& omegas, const std::vector<Vector>& gains,
                                 double tau, double G, const std::vector<Vector>& comparators = {});

/// Lambda stream against lambda* = B^T mu*, with exact gains U[r + gamma P V_t - Q_t].
struct LambdaRegretAudit {
    double regret = 0.0;
    double bound = 0.0;  // KL(lambda*||lambda_1)/eta + eta T m^2 (1+2RD)^2 / 2
};

LambdaRegretAudit lambda_regret_audit(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                      const std::vector<RoundState>& rounds, const OptimalSolution& opt,
                                      double eta, double D_gamma);

/// sum_x nu*(x) sum_t <pi*(.|x) - pi_t(.|x), Q_t(x,.)> against
/// H(pi*||pi_1)/beta + beta T R^2 D^2 / 2.
struct PolicyRegretAudit {
    double regret = 0.0;
    double bound = 0.0;
    double conditional_entropy = 0.0;
};

PolicyRegretAudit policy_regret_audit(const Mdp& mdp, const FeatureMap& phi,
                                      const std::vector<RoundState>& rounds, const OptimalSolution& opt,
                                      double beta, double D_gamma);

/// Per-round SGD suboptimality <theta_t - theta*, g_t> with the worst
/// comparator in the ball, theta* = -D g_t / ||g_t||.
struct SgdAudit {
    std::vector<double> per_round;
    double mean = 0.0;
    double bound = 0.0;  // (2D)^2 / (2 alpha K) + 2 alpha R^2
};

SgdAudit sgd_audit(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                   const std::vector<RoundState>& rounds, double alpha, std::uint64_t K, double D_gamma);

// ---------------------------------------------------------------------------
// Approximation error
// ---------------------------------------------------------------------------

struct ApproxErrorReport {
    double mean_eps_pi = 0.0;    // mean_t of the Chebyshev bound on eps_{pi_t}
    double ibe = 0.0;            // max(sampled estimate, per-round fits)
    double ibe_sampled = 0.0;
    double ibe_rounds = 0.0;     // max_t fit error of r + gamma P V_t over the ball
    double core_term = 0.0;      // <mu*, eps_core>
    double D_gamma = 0.0;
    double eps_approx_bound = 0.0;  // 2 mean_eps + 2 ibe + 2 D core_term
};

ApproxErrorReport approx_error_report(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                      const RunTrace& trace, double beta, double D_gamma,
                                      Index ibe_policies, std::uint64_t seed,
                                      const ChebyshevOptions& opts = {});

/// gap + 2 eps + 2 ibe + 2 D core_term >= mean subopt - slack. The eps term
/// is the fit error of the theta*_t the gap actually used.
struct GeneralGapAudit {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = false;
};

GeneralGapAudit general_gap_audit(const DualityGapReport& gap, const ApproxErrorReport& approx,
                                  double slack = 1e-8);

}  // namespace coreplan
