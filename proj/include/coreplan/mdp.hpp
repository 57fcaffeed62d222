#pragma once

// Exact finite-MDP representation, the linear operators built on it, and the
// dense oracles (policy evaluation, occupancy measures, optimal values) that
// the stochastic planner is audited against.
//
// Layout: state-action vectors are x-major, a-minor (see pair_index). The
// transition table has one row per pair and one column per next state.

#include <cstdint>
#include <vector>

#include "coreplan/common.hpp"

namespace coreplan {

struct Mdp {
    Index num_states = 0;
    Index num_actions = 0;
    double gamma = 0.0;
    Vector nu0;         // length X
    Vector reward;      // length X*A, entries in [0,1]
    Matrix transition;  // (X*A) x X, row-stochastic

    Index num_pairs() const { return num_states * num_actions; }

    /// Throws ContractError unless every invariant holds: stochastic rows and
    /// initial distribution (1e-12), rewards in [0,1], gamma in [0,1).
    void validate() const;
};

/// Row-stochastic X x A table of action probabilities.
struct Policy {
    Matrix probs;

    Index num_states() const { return static_cast<Index>(probs.rows()); }
    Index num_actions() const { return static_cast<Index>(probs.cols()); }
    double operator()(Index x, Index a) const { return probs(x, a); }

    void validate() const;

    static Policy uniform(Index num_states, Index num_actions);
    static Policy deterministic(const std::vector<Index>& actions, Index num_actions);
};

struct ExactQuantities {
    Vector q_pi;
    Vector v_pi;
    Vector mu_pi;
    Vector nu_pi;
    double return_pi = 0.0;
};

struct OptimalSolution {
    Vector q_star;
    Vector v_star;
    Policy pi_star;
    Vector mu_star;
    std::vector<Index> greedy_actions;
    Index vi_iterations = 0;
};

/// (Pv)(x,a) = sum_x' P(x'|x,a) v(x').
Vector apply_transition(const Mdp& mdp, const Vector& v);

/// (P^T u)(x') = sum_{x,a} P(x'|x,a) u(x,a).
Vector apply_transition_adjoint(const Mdp& mdp, const Vector& u);

/// (Ev)(x,a) = v(x).
Vector expand_values(const Vector& v, Index num_actions);

/// (E^T u)(x) = sum_a u(x,a).
Vector aggregate_over_actions(const Vector& u, Index num_actions);

/// (M^pi q)(x) = sum_a pi(a|x) q(x,a).
Vector mean_operator(const Policy& policy, const Vector& q);

/// (M q)(x) = max_a q(x,a). The max operator M and M* are the same thing.
Vector max_operator(const Vector& q, Index num_actions);

/// State-action vector nu o pi with entries nu(x) pi(a|x).
Vector direct_product(const Vector& nu, const Policy& policy);

/// Greedy policy; ties go to the lowest action index. Values within
/// tie_tol of the row maximum count as ties.
std::vector<Index> greedy_actions(const Vector& q, Index num_actions, double tie_tol = 0.0);

/// Exact Q^pi, V^pi, mu^pi, nu^pi and the normalized return via dense LU solves.
ExactQuantities evaluate_policy(const Mdp& mdp, const Policy& policy);

/// Value iteration on Q until the sup-norm update is at most
/// tol*(1-gamma)/(2*gamma), greedy extraction, then policy-iteration polishing
/// with exact evaluation so that q_star is the fixed point to solver accuracy.
OptimalSolution optimal_values(const Mdp& mdp, double tol = 1e-10);

/// sup-norm of q - r - gamma P M^pi q.
double bellman_residual(const Mdp& mdp, const Policy& policy, const Vector& q);

/// sup-norm of E^T mu - (1-gamma) nu0 - gamma P^T mu.
double flow_residual(const Mdp& mdp, const Vector& mu);

/// Two states {0,1}, actions {stay=0, go=1}, deterministic: stay keeps the
/// state, go flips it. r(x,.) = 1{x=1}, nu0 = delta_0.
Mdp toggle_mdp(double gamma);

/// Dense random MDP: Dirichlet(1) transition rows and initial distribution,
/// uniform [0,1] rewards.
Mdp random_mdp(std::uint64_t seed, Index num_states, Index num_actions, double gamma);

}  // namespace coreplan
