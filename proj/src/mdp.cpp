#include "coreplan/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coreplan/kernels.hpp"
#include "coreplan/sampling.hpp"

namespace coreplan {
namespace {

constexpr double kStochasticTol = 1e-12;

void check_distribution(const double* p, Index n, const std::string& what) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
        if (!(p[i] >= 0.0))
            throw ContractError(what + ": negative or non-finite entry");
        s += p[i];
    }
    if (std::abs(s - 1.0) > kStochasticTol)
        throw ContractError(what + ": does not sum to 1 (sum = " + std::to_string(s) + ")");
}

// P_pi(x, x') = sum_a pi(a|x) P(x'|x,a)
Matrix policy_transition(const Mdp& mdp, const Policy& policy) {
    const Index X = mdp.num_states, A = mdp.num_actions;
    Matrix p_pi = Matrix::Zero(X, X);
    for (Index x = 0; x < X; ++x)
        for (Index a = 0; a < A; ++a) {
            const double w = policy(x, a);
            if (w != 0.0)
                p_pi.row(x) += w * mdp.transition.row(pair_index(x, a, A));
        }
    return p_pi;
}

Vector policy_reward(const Mdp& mdp, const Policy& policy) {
    return mean_operator(policy, mdp.reward);
}

void check_sizes(const Mdp& mdp, const Policy& policy) {
    require(policy.num_states() == mdp.num_states && policy.num_actions() == mdp.num_actions,
            "policy shape does not match the MDP");
}

bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace

void Mdp::validate() const {
    require(num_states > 0 && num_actions > 0, "Mdp: num_states and num_actions must be positive");
    require(gamma >= 0.0 && gamma < 1.0, "Mdp: gamma must lie in [0, 1)");
    require(static_cast<Index>(nu0.size()) == num_states, "Mdp: nu0 has wrong length");
    require(static_cast<Index>(reward.size()) == num_pairs(), "Mdp: reward has wrong length");
    require(static_cast<Index>(transition.rows()) == num_pairs() &&
                static_cast<Index>(transition.cols()) == num_states,
            "Mdp: transition must be (X*A) x X");
    check_distribution(nu0.data(), num_states, "Mdp: nu0");
    for (Index z = 0; z < num_pairs(); ++z)
        check_distribution(transition.data() + z * num_states, num_states,
                           "Mdp: transition row " + std::to_string(z));
    for (Index z = 0; z < num_pairs(); ++z)
        require(reward[z] >= 0.0 && reward[z] <= 1.0, "Mdp: reward entries must lie in [0,1]");
}

void Policy::validate() const {
    require(probs.rows() > 0 && probs.cols() > 0, "Policy: empty table");
    for (Eigen::Index x = 0; x < probs.rows(); ++x)
        check_distribution(probs.data() + x * probs.cols(), num_actions(),
                           "Policy: row " + std::to_string(x));
}

Policy Policy::uniform(Index num_states, Index num_actions) {
    Policy p;
    p.probs = Matrix::Constant(num_states, num_actions, 1.0 / static_cast<double>(num_actions));
    return p;
}

Policy Policy::deterministic(const std::vector<Index>& actions, Index num_actions) {
    Policy p;
    p.probs = Matrix::Zero(static_cast<Eigen::Index>(actions.size()), num_actions);
    for (Index x = 0; x < actions.size(); ++x) {
        require(actions[x] < num_actions, "Policy::deterministic: action out of range");
        p.probs(x, actions[x]) = 1.0;
    }
    return p;
}

Vector apply_transition(const Mdp& mdp, const Vector& v) {
    require(static_cast<Index>(v.size()) == mdp.num_states, "apply_transition: v must have length X");
    Vector out(mdp.num_pairs());
    kernels::active().gemv(mdp.transition.data(), mdp.num_pairs(), mdp.num_states, v.data(), out.data());
    return out;
}

Vector apply_transition_adjoint(const Mdp& mdp, const Vector& u) {
    require(static_cast<Index>(u.size()) == mdp.num_pairs(),
            "apply_transition_adjoint: u must have length X*A");
    return mdp.transition.transpose() * u;
}

Vector expand_values(const Vector& v, Index num_actions) {
    require(num_actions > 0, "expand_values: num_actions must be positive");
    const Index X = static_cast<Index>(v.size());
    Vector out(X * num_actions);
    for (Index x = 0; x < X; ++x)
        for (Index a = 0; a < num_actions; ++a)
            out[pair_index(x, a, num_actions)] = v[x];
    return out;
}

Vector aggregate_over_actions(const Vector& u, Index num_actions) {
    require(num_actions > 0 && u.size() % num_actions == 0,
            "aggregate_over_actions: length must be a multiple of num_actions");
    const Index X = static_cast<Index>(u.size()) / num_actions;
    Vector out = Vector::Zero(X);
    for (Index x = 0; x < X; ++x)
        for (Index a = 0; a < num_actions; ++a)
            out[x] += u[pair_index(x, a, num_actions)];
    return out;
}

Vector mean_operator(const Policy& policy, const Vector& q) {
    const Index X = policy.num_states(), A = policy.num_actions();
    require(static_cast<Index>(q.size()) == X * A, "mean_operator: q must have length X*A");
    Vector out(X);
    for (Index x = 0; x < X; ++x)
        out[x] = kernels::active().dot(policy.probs.data() + x * A, q.data() + x * A, A);
    return out;
}

Vector max_operator(const Vector& q, Index num_actions) {
    require(num_actions > 0 && q.size() % num_actions == 0,
            "max_operator: length must be a multiple of num_actions");
    const Index X = static_cast<Index>(q.size()) / num_actions;
    Vector out(X);
    for (Index x = 0; x < X; ++x)
        out[x] = kernels::active().max_value(q.data() + x * num_actions, num_actions);
    return out;
}

Vector direct_product(const Vector& nu, const Policy& policy) {
    const Index X = policy.num_states(), A = policy.num_actions();
    require(static_cast<Index>(nu.size()) == X, "direct_product: nu must have length X");
    Vector out(X * A);
    for (Index x = 0; x < X; ++x)
        for (Index a = 0; a < A; ++a)
            out[pair_index(x, a, A)] = nu[x] * policy(x, a);
    return out;
}

std::vector<Index> greedy_actions(const Vector& q, Index num_actions, double tie_tol) {
    require(num_actions > 0 && q.size() % num_actions == 0,
            "greedy_actions: length must be a multiple of num_actions");
    const Index X = static_cast<Index>(q.size()) / num_actions;
    std::vector<Index> out(X, 0);
    for (Index x = 0; x < X; ++x) {
        const double* row = q.data() + x * num_actions;
        const double best = *std::max_element(row, row + num_actions);
        for (Index a = 0; a < num_actions; ++a)
            if (row[a] >= best - tie_tol) {
                out[x] = a;
                break;
            }
    }
    return out;
}

ExactQuantities evaluate_policy(const Mdp& mdp, const Policy& policy) {
    check_sizes(mdp, policy);
    const Index X = mdp.num_states;
    const Matrix p_pi = policy_transition(mdp, policy);
    const Matrix I = Matrix::Identity(X, X);

    // V solves (I - gamma P_pi) V = r_pi, then Q = r + gamma P V. This is the
    // same fixed point as Q = r + gamma P M^pi Q, solved on the smaller system.
    Eigen::PartialPivLU<Matrix> lu(I - mdp.gamma * p_pi);
    ExactQuantities out;
    out.v_pi = lu.solve(policy_reward(mdp, policy));
    out.q_pi = mdp.reward + mdp.gamma * apply_transition(mdp, out.v_pi);
    out.v_pi = mean_operator(policy, out.q_pi);

    // nu solves (I - gamma P_pi^T) nu = (1 - gamma) nu0.
    Eigen::PartialPivLU<Matrix> lu_t(I - mdp.gamma * p_pi.transpose());
    out.nu_pi = lu_t.solve((1.0 - mdp.gamma) * mdp.nu0);
    out.mu_pi = direct_product(out.nu_pi, policy);
    out.return_pi = out.mu_pi.dot(mdp.reward);

    if (!all_finite(out.q_pi) || !all_finite(out.mu_pi))
        throw ContractError("evaluate_policy: linear solve failed (malformed MDP?)");
    return out;
}

OptimalSolution optimal_values(const Mdp& mdp, double tol) {
    require(tol > 0.0, "optimal_values: tol must be positive");
    mdp.validate();
    const Index A = mdp.num_actions;
    OptimalSolution sol;

    Vector q = mdp.reward;
    if (mdp.gamma > 0.0) {
        const double stop = tol * (1.0 - mdp.gamma) / (2.0 * mdp.gamma);
        for (;;) {
            Vector next = mdp.reward + mdp.gamma * apply_transition(mdp, max_operator(q, A));
            const double delta = (next - q).cwiseAbs().maxCoeff();
            q.swap(next);
            ++sol.vi_iterations;
            if (delta <= stop)
                break;
        }
    } else {
        sol.vi_iterations = 1;
    }

    // Policy-iteration polish. Switch only on a strict improvement so that
    // near-ties cannot make the loop cycle.
    std::vector<Index> actions = greedy_actions(q, A);
    ExactQuantities ex;
    for (Index iter = 0; iter < mdp.num_pairs() + 16; ++iter) {
        ex = evaluate_policy(mdp, Policy::deterministic(actions, A));
        const double scale = 1.0 + ex.q_pi.cwiseAbs().maxCoeff();
        bool changed = false;
        for (Index x = 0; x < mdp.num_states; ++x) {
            const double* row = ex.q_pi.data() + x * A;
            const Index best = static_cast<Index>(std::max_element(row, row + A) - row);
            if (row[best] > row[actions[x]] + 1e-12 * scale) {
                actions[x] = best;
                changed = true;
            }
        }
        if (!changed)
            break;
    }

    // Final extraction with lowest-index tie-breaking on the exact values.
    const double scale = 1.0 + ex.q_pi.cwiseAbs().maxCoeff();
    const std::vector<Index> tied = greedy_actions(ex.q_pi, A, 1e-12 * scale);
    if (tied != actions) {
        actions = tied;
        ex = evaluate_policy(mdp, Policy::deterministic(actions, A));
    }

    sol.greedy_actions = actions;
    sol.pi_star = Policy::deterministic(actions, A);
    sol.q_star = ex.q_pi;
    sol.v_star = max_operator(ex.q_pi, A);
    sol.mu_star = ex.mu_pi;
    return sol;
}

double bellman_residual(const Mdp& mdp, const Policy& policy, const Vector& q) {
    check_sizes(mdp, policy);
    const Vector rhs = mdp.reward + mdp.gamma * apply_transition(mdp, mean_operator(policy, q));
    return (q - rhs).cwiseAbs().maxCoeff();
}

double flow_residual(const Mdp& mdp, const Vector& mu) {
    const Vector lhs = aggregate_over_actions(mu, mdp.num_actions);
    const Vector rhs = (1.0 - mdp.gamma) * mdp.nu0 + mdp.gamma * apply_transition_adjoint(mdp, mu);
    return (lhs - rhs).cwiseAbs().maxCoeff();
}

Mdp toggle_mdp(double gamma) {
    Mdp m;
    m.num_states = 2;
    m.num_actions = 2;
    m.gamma = gamma;
    m.nu0 = Vector::Zero(2);
    m.nu0[0] = 1.0;
    m.reward = Vector::Zero(4);
    m.reward[pair_index(1, 0, 2)] = 1.0;
    m.reward[pair_index(1, 1, 2)] = 1.0;
    m.transition = Matrix::Zero(4, 2);
    for (Index x = 0; x < 2; ++x) {
        m.transition(pair_index(x, 0, 2), x) = 1.0;      // stay
        m.transition(pair_index(x, 1, 2), 1 - x) = 1.0;  // go
    }
    return m;
}

Mdp random_mdp(std::uint64_t seed, Index num_states, Index num_actions, double gamma) {
    require(num_states > 0 && num_actions > 0, "random_mdp: dimensions must be positive");
    RandomStream rng(seed, StreamId::generator);
    Mdp m;
    m.num_states = num_states;
    m.num_actions = num_actions;
    m.gamma = gamma;
    m.nu0 = dirichlet_ones(rng, num_states);
    m.reward.resize(m.num_pairs());
    for (Index z = 0; z < m.num_pairs(); ++z)
        m.reward[z] = rng.uniform();
    m.transition.resize(m.num_pairs(), num_states);
    for (Index z = 0; z < m.num_pairs(); ++z)
        m.transition.row(z) = dirichlet_ones(rng, num_states).transpose();
    m.validate();
    return m;
}

}  // namespace coreplan
