#include "coreplan/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace coreplan {
namespace {

constexpr double kSimplexTol = 1e-9;
constexpr double kBallSlack = 1e-12;

bool on_simplex(const Vector& p, Index n) {
    return static_cast<Index>(p.size()) == n && p.minCoeff() >= -kSimplexTol &&
           std::abs(p.sum() - 1.0) <= kSimplexTol;
}

Vector uniform_vector(Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

Vector row_of(const Policy& p, Index x) { return p.probs.row(x).transpose(); }

// Softmax policy table for Theta without going through SoftmaxPolicy, so the
// audit path stays independent of the planner's implementation.
Policy softmax_table(const FeatureMap& phi, Index num_actions, double beta, const Vector& theta_cum) {
    const Vector logits = beta * (phi.phi * theta_cum);
    const Index X = phi.num_pairs() / num_actions;
    Policy p;
    p.probs.resize(X, num_actions);
    for (Index x = 0; x < X; ++x) {
        const auto seg = logits.segment(x * num_actions, num_actions);
        const double mx = seg.maxCoeff();
        double s = 0.0;
        for (Index a = 0; a < num_actions; ++a) {
            p.probs(x, a) = std::exp(seg[a] - mx);
            s += p.probs(x, a);
        }
        p.probs.row(x) /= s;
    }
    return p;
}

Vector lambda_star_of(const CoreSet& core, const Vector& mu_star) { return core.interp.transpose() * mu_star; }

}  // namespace

void check_domain(const SaddlePoint& p, Index m, Index num_pairs, Index num_states, double radius_R,
                  double D_gamma) {
    require(on_simplex(p.lambda, m), "lagrangian: lambda must lie on the core simplex");
    require(on_simplex(p.u, num_pairs), "lagrangian: u must lie on the state-action simplex");
    require(p.theta.norm() <= D_gamma * (1.0 + kBallSlack) + kBallSlack,
            "lagrangian: theta must lie in the D_gamma ball");
    require(static_cast<Index>(p.v.size()) == num_states, "lagrangian: V must have length X");
    const double vmax = p.v.size() ? p.v.cwiseAbs().maxCoeff() : 0.0;
    require(vmax <= radius_R * D_gamma * (1.0 + kBallSlack) + kBallSlack,
            "lagrangian: V must satisfy ||V||_inf <= R D_gamma");
}

double lagrangian_unchecked(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const SaddlePoint& p) {
    require(static_cast<Index>(p.lambda.size()) == core.size(), "lagrangian: lambda length must be m");
    require(static_cast<Index>(p.u.size()) == mdp.num_pairs(), "lagrangian: u length must be X*A");
    require(static_cast<Index>(p.theta.size()) == phi.dim(), "lagrangian: theta length must be d");
    require(static_cast<Index>(p.v.size()) == mdp.num_states, "lagrangian: V length must be X");
    const Vector q = phi.phi * p.theta;
    const Vector bellman = mdp.reward + mdp.gamma * apply_transition(mdp, p.v) - q;
    const double first = p.lambda.dot(core.restrict(bellman));
    const double second = (1.0 - mdp.gamma) * mdp.nu0.dot(p.v);
    const double third = p.u.dot(q - expand_values(p.v, mdp.num_actions));
    return first + second + third;
}

double lagrangian(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const SaddlePoint& p,
                  double D_gamma) {
    check_domain(p, core.size(), mdp.num_pairs(), mdp.num_states, phi.radius, D_gamma);
    return lagrangian_unchecked(mdp, phi, core, p);
}

ImplicitIterates implicit_iterates(const Mdp& mdp, const CoreSet& core, const Vector& lambda,
                                   const Policy& policy) {
    ImplicitIterates it;
    it.nu = mdp.gamma * apply_transition_adjoint(mdp, core.lift(lambda, mdp.num_pairs())) +
            (1.0 - mdp.gamma) * mdp.nu0;
    it.u = direct_product(it.nu, policy);
    return it;
}

Vector exact_grad_theta(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const Vector& lambda,
                        const Policy& policy) {
    const ImplicitIterates it = implicit_iterates(mdp, core, lambda, policy);
    return phi.phi.transpose() * (it.u - core.lift(lambda, mdp.num_pairs()));
}

Vector exact_grad_lambda(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const Vector& theta,
                         const Policy& policy) {
    const Vector q = phi.phi * theta;
    const Vector v = mean_operator(policy, q);
    return core.restrict(mdp.reward + mdp.gamma * apply_transition(mdp, v) - q);
}

double suboptimality(const Mdp& mdp, const OptimalSolution& opt, const Policy& policy) {
    return opt.mu_star.dot(mdp.reward) - evaluate_policy(mdp, policy).return_pi;
}

double suboptimality(const Mdp& mdp, const Policy& policy) {
    return suboptimality(mdp, optimal_values(mdp), policy);
}

double kl_divergence(const Vector& p, const Vector& q) {
    require(p.size() == q.size(), "kl_divergence: length mismatch");
    double s = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0)
            continue;
        if (q[i] <= 0.0)
            return std::numeric_limits<double>::infinity();
        s += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(s, 0.0);
}

double conditional_relative_entropy(const Vector& nu, const Policy& pi, const Policy& ref) {
    require(pi.num_states() == ref.num_states() && static_cast<Index>(nu.size()) == pi.num_states(),
            "conditional_relative_entropy: shape mismatch");
    double h = 0.0;
    for (Index x = 0; x < pi.num_states(); ++x)
        if (nu[x] > 0.0)
            h += nu[x] * kl_divergence(row_of(pi, x), row_of(ref, x));
    return h;
}

// ---------------------------------------------------------------------------

std::vector<RoundState> reconstruct_rounds(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                           const RunTrace& trace, double beta) {
    require(!trace.rounds.empty(), "reconstruct_rounds: trace has no recorded rounds");
    std::vector<RoundState> out;
    out.reserve(trace.rounds.size());
    Vector theta_cum = Vector::Zero(phi.dim());
    for (const RoundRecord& rec : trace.rounds) {
        require(static_cast<Index>(rec.lambda.size()) == core.size() &&
                    static_cast<Index>(rec.theta.size()) == phi.dim(),
                "reconstruct_rounds: trace does not match the instance dimensions");
        RoundState s;
        s.lambda = rec.lambda;
        s.theta = rec.theta;
        s.policy = softmax_table(phi, mdp.num_actions, beta, theta_cum);
        s.q = phi.phi * rec.theta;
        s.v = mean_operator(s.policy, s.q);
        ImplicitIterates it = implicit_iterates(mdp, core, s.lambda, s.policy);
        s.nu = std::move(it.nu);
        s.u = std::move(it.u);
        theta_cum += rec.theta;
        out.push_back(std::move(s));
    }
    return out;
}

DualityGapReport dynamic_duality_gap(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                     const RunTrace& trace, double beta, double D_gamma,
                                     const LinearMdpWitness* witness, const ChebyshevOptions& opts) {
    const OptimalSolution opt = optimal_values(mdp);
    const std::vector<RoundState> rounds = reconstruct_rounds(mdp, phi, core, trace, beta);
    const double opt_return = opt.mu_star.dot(mdp.reward);

    DualityGapReport rep;
    rep.mu_star = opt.mu_star;
    rep.lambda_star = lambda_star_of(core, opt.mu_star);
    rep.witness_comparators = witness != nullptr;

    const double v_box = phi.radius * D_gamma;
    for (std::size_t i = 0; i < rounds.size(); ++i) {
        const RoundState& s = rounds[i];
        const ExactQuantities ex = evaluate_policy(mdp, s.policy);
        Vector theta_star;
        if (witness)
            theta_star = witness->q_parameter(mdp.gamma, ex.v_pi);
        else
            theta_star = chebyshev_fit(phi.phi, ex.q_pi, D_gamma, opts).theta;
        if (theta_star.norm() > D_gamma * (1.0 + kBallSlack) || ex.v_pi.cwiseAbs().maxCoeff() > v_box)
            rep.comparators_in_domain = false;

        GapRound g;
        g.t = i + 1;
        g.L_left = lagrangian_unchecked(mdp, phi, core, {rep.lambda_star, rep.mu_star, s.theta, s.v});
        g.L_mid = lagrangian_unchecked(mdp, phi, core, {s.lambda, s.u, s.theta, s.v});
        g.L_right = lagrangian_unchecked(mdp, phi, core, {s.lambda, s.u, theta_star, ex.v_pi});
        g.subopt = opt_return - ex.return_pi;
        g.eps_pi = (phi.phi * theta_star - ex.q_pi).cwiseAbs().maxCoeff();

        rep.primal_regret += g.L_left - g.L_mid;
        rep.dual_dynamic_regret += g.L_mid - g.L_right;
        rep.gap += g.L_left - g.L_right;
        rep.mean_subopt += g.subopt;
        rep.mean_eps_pi += g.eps_pi;
        rep.theta_star.push_back(std::move(theta_star));
        rep.v_star.push_back(ex.v_pi);
        rep.rounds.push_back(g);
    }
    const double T = static_cast<double>(rounds.size());
    rep.gap /= T;
    rep.mean_subopt /= T;
    rep.mean_eps_pi /= T;
    return rep;
}

// ---------------------------------------------------------------------------

CertificateReport certificate_check_relaxed_lp(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                               const LinearMdpWitness* witness, double tol) {
    require(tol > 0.0, "certificate_check_relaxed_lp: tol must be positive");
    const OptimalSolution opt = optimal_values(mdp);
    const Index Z = mdp.num_pairs();
    CertificateReport rep;

    // Primal candidate.
    const Vector lambda = lambda_star_of(core, opt.mu_star);
    const Vector& u = opt.mu_star;
    const Vector lifted = core.lift(lambda, Z);
    const Vector flow = aggregate_over_actions(u, mdp.num_actions) - (1.0 - mdp.gamma) * mdp.nu0 -
                        mdp.gamma * apply_transition_adjoint(mdp, lifted);
    rep.flow_residual = flow.cwiseAbs().maxCoeff();
    rep.feature_residual = (phi.phi.transpose() * (lifted - u)).cwiseAbs().maxCoeff();
    const double negativity = std::max({0.0, -lambda.minCoeff(), -u.minCoeff()});
    rep.primal_residual = std::max({rep.flow_residual, rep.feature_residual, negativity});

    // Dual candidate.
    Vector theta;
    if (witness)
        theta = witness->q_parameter(mdp.gamma, opt.v_star);
    else
        theta = phi.phi.completeOrthogonalDecomposition().solve(opt.q_star);
    const Vector q = phi.phi * theta;
    rep.q_fit_residual = (q - opt.q_star).cwiseAbs().maxCoeff();
    rep.value_residual = std::max(0.0, (q - expand_values(opt.v_star, mdp.num_actions)).maxCoeff());
    const Vector target = mdp.reward + mdp.gamma * apply_transition(mdp, opt.v_star);
    rep.core_bellman_residual = std::max(0.0, (core.restrict(target) - core.restrict(q)).maxCoeff());
    rep.dual_residual = std::max(rep.value_residual, rep.core_bellman_residual);

    rep.primal_objective = lambda.dot(core.restrict(mdp.reward));
    rep.dual_objective = (1.0 - mdp.gamma) * mdp.nu0.dot(opt.v_star);
    rep.objective_gap = std::abs(rep.primal_objective - rep.dual_objective);

    if (rep.flow_residual > tol)
        rep.violations.push_back("primal flow constraint E^T u = (1-gamma) nu0 + gamma P^T U^T lambda");
    if (rep.feature_residual > tol)
        rep.violations.push_back("primal feature constraint Phi^T U^T lambda = Phi^T u");
    if (negativity > tol)
        rep.violations.push_back("primal nonnegativity");
    if (rep.value_residual > tol)
        rep.violations.push_back("dual constraint E V >= Phi theta");
    if (rep.core_bellman_residual > tol)
        rep.violations.push_back("dual constraint U Phi theta >= U (r + gamma P V)");
    if (rep.objective_gap > tol)
        rep.violations.push_back("objective mismatch <lambda, U r> vs (1-gamma) <nu0, V>");
    rep.passed = rep.violations.empty();
    return rep;
}

// ---------------------------------------------------------------------------

OmdRegretReport omd_regret_audit(const std::vector<Vector>& omegas, const std::vector<Vector>& gains,
                                 double tau, double G, const std::vector<Vector>& comparators) {
    require(!gains.empty() && omegas.size() >= gains.size(), "omd_regret_audit: need one iterate per gain");
    require(tau > 0.0 && G >= 0.0, "omd_regret_audit: tau must be positive and G nonnegative");
    const Index N = static_cast<Index>(gains.front().size());
    const double n = static_cast<double>(gains.size());

    Vector total = Vector::Zero(N);
    double earned = 0.0;
    for (std::size_t k = 0; k < gains.size(); ++k) {
        require(static_cast<Index>(gains[k].size()) == N && static_cast<Index>(omegas[k].size()) == N,
                "omd_regret_audit: dimension mismatch");
        require(gains[k].cwiseAbs().maxCoeff() <= G * (1.0 + 1e-12),
                "omd_regret_audit: gain exceeds the stated sup-norm bound G");
        total += gains[k];
        earned += omegas[k].dot(gains[k]);
    }
    const Vector& omega1 = omegas.front();
    const double noise = tau * n * G * G / 2.0;

    OmdRegretReport rep;
    Eigen::Index best = 0;
    total.maxCoeff(&best);
    rep.best_index = static_cast<Index>(best);
    rep.best_fixed_regret = total[best] - earned;
    rep.best_fixed_bound = -std::log(omega1[best]) / tau + noise;
    rep.margin = rep.best_fixed_bound - rep.best_fixed_regret;
    for (const Vector& c : comparators) {
        const double r = c.dot(total) - earned;
        const double b = kl_divergence(c, omega1) / tau + noise;
        rep.comparator_regrets.push_back(r);
        rep.comparator_bounds.push_back(b);
        rep.margin = std::min(rep.margin, b - r);
    }
    return rep;
}

LambdaRegretAudit lambda_regret_audit(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                      const std::vector<RoundState>& rounds, const OptimalSolution& opt,
                                      double eta, double D_gamma) {
    const Index m = core.size();
    const Vector lambda_star = lambda_star_of(core, opt.mu_star);
    LambdaRegretAudit a;
    for (const RoundState& s : rounds) {
        const Vector g = core.restrict(mdp.reward + mdp.gamma * apply_transition(mdp, s.v) - s.q);
        a.regret += (lambda_star - s.lambda).dot(g);
    }
    const double G = static_cast<double>(m) * (1.0 + 2.0 * phi.radius * D_gamma);
    a.bound = kl_divergence(lambda_star, uniform_vector(m)) / eta +
              eta * static_cast<double>(rounds.size()) * G * G / 2.0;
    return a;
}

PolicyRegretAudit policy_regret_audit(const Mdp& mdp, const FeatureMap& phi,
                                      const std::vector<RoundState>& rounds, const OptimalSolution& opt,
                                      double beta, double D_gamma) {
    const Index X = mdp.num_states, A = mdp.num_actions;
    const Vector nu_star = aggregate_over_actions(opt.mu_star, A);
    PolicyRegretAudit a;
    for (const RoundState& s : rounds) {
        for (Index x = 0; x < X; ++x) {
            double inner = 0.0;
            for (Index a_ = 0; a_ < A; ++a_)
                inner += (opt.pi_star(x, a_) - s.policy(x, a_)) * s.q[pair_index(x, a_, A)];
            a.regret += nu_star[x] * inner;
        }
    }
    a.conditional_entropy = conditional_relative_entropy(nu_star, opt.pi_star, Policy::uniform(X, A));
    const double RD = phi.radius * D_gamma;
    a.bound = a.conditional_entropy / beta + beta * static_cast<double>(rounds.size()) * RD * RD / 2.0;
    return a;
}

SgdAudit sgd_audit(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                   const std::vector<RoundState>& rounds, double alpha, std::uint64_t K, double D_gamma) {
    SgdAudit a;
    for (const RoundState& s : rounds) {
        const Vector g = phi.phi.transpose() * (s.u - core.lift(s.lambda, mdp.num_pairs()));
        // max over ||theta*|| <= D of <theta_t - theta*, g>
        a.per_round.push_back(s.theta.dot(g) + D_gamma * g.norm());
        a.mean += a.per_round.back();
    }
    a.mean /= static_cast<double>(rounds.size());
    const double R = phi.radius;
    a.bound = 4.0 * D_gamma * D_gamma / (2.0 * alpha * static_cast<double>(K)) + 2.0 * alpha * R * R;
    return a;
}

// ---------------------------------------------------------------------------

ApproxErrorReport approx_error_report(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core,
                                      const RunTrace& trace, double beta, double D_gamma,
                                      Index ibe_policies, std::uint64_t seed, const ChebyshevOptions& opts) {
    const OptimalSolution opt = optimal_values(mdp);
    const std::vector<RoundState> rounds = reconstruct_rounds(mdp, phi, core, trace, beta);
    ApproxErrorReport rep;
    rep.D_gamma = D_gamma;
    for (const RoundState& s : rounds) {
        const ExactQuantities ex = evaluate_policy(mdp, s.policy);
        rep.mean_eps_pi += chebyshev_fit(phi.phi, ex.q_pi, D_gamma, opts).error;
        const Vector target = mdp.reward + mdp.gamma * apply_transition(mdp, s.v);
        rep.ibe_rounds = std::max(rep.ibe_rounds, chebyshev_fit(phi.phi, target, D_gamma, opts).error);
    }
    rep.mean_eps_pi /= static_cast<double>(rounds.size());
    rep.ibe_sampled = ibe_policies > 0 ? ibe_estimate(mdp, phi, D_gamma, ibe_policies, seed, opts) : 0.0;
    rep.ibe = std::max(rep.ibe_sampled, rep.ibe_rounds);
    rep.core_term = opt.mu_star.dot(core.eps_core);
    rep.eps_approx_bound = 2.0 * rep.mean_eps_pi + 2.0 * rep.ibe + 2.0 * D_gamma * rep.core_term;
    return rep;
}

GeneralGapAudit general_gap_audit(const DualityGapReport& gap, const ApproxErrorReport& approx, double slack) {
    GeneralGapAudit a;
    a.lhs = gap.gap + 2.0 * gap.mean_eps_pi + 2.0 * approx.ibe + 2.0 * approx.D_gamma * approx.core_term;
    a.rhs = gap.mean_subopt - slack;
    a.holds = a.lhs >= a.rhs;
    return a;
}

}  // namespace coreplan
