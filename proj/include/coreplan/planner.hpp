#pragma once

// Primal-dual stochastic global planner.
//
// Each round t runs K projected-SGD steps on theta against the Lagrangian at
// (lambda_t, u_t), averages the iterates into theta_t, takes one
// exponentiated-gradient step on the core-set weights lambda, and folds
// theta_t into the cumulative softmax parameter. The state distribution nu_t,
// the occupancy u_t and the value function V_t are never materialized: the
// samplers below realize them implicitly, and V_t is evaluated only at the
// states that get sampled.

#include <cstdint>
#include <span>
#include <vector>

#include "coreplan/common.hpp"
#include "coreplan/features.hpp"
#include "coreplan/mdp.hpp"
#include "coreplan/sampling.hpp"

namespace coreplan {

struct PlannerConfig {
    std::uint64_t T = 1;
    std::uint64_t K = 1;
    double eta = 0.0;    // lambda step
    double beta = 0.0;   // softmax step / temperature
    double alpha = 0.0;  // SGD step
    double D_gamma = 0.0;
    std::uint64_t seed = 0;
    bool record_trace = true;

    void validate() const;
};

/// pi(a|x) proportional to pi_1(a|x) exp(beta <phi(x,a), Theta>) with pi_1 uniform.
class SoftmaxPolicy {
public:
    SoftmaxPolicy(const FeatureMap& phi, Index num_actions, double beta);
    SoftmaxPolicy(const FeatureMap& phi, Index num_actions, double beta, Vector theta_cum);

    /// Writes pi(.|x) into out (length num_actions).
    void probabilities(Index x, std::span<double> out) const;

    /// Draws a ~ pi(.|x); scratch must hold num_actions doubles.
    Index sample(Index x, RandomStream& rng, std::span<double> scratch) const;

    /// sum_a pi(a|x) <phi(x,a), theta>; scratch must hold num_actions doubles.
    double state_value(Index x, const Vector& theta, std::span<double> scratch) const;

    /// Dense X x A table.
    Policy materialize() const;

    void accumulate(const Vector& theta_t) { theta_cum_ += theta_t; }

    const Vector& theta_cum() const { return theta_cum_; }
    double beta() const { return beta_; }
    Index num_actions() const { return num_actions_; }
    Index num_states() const { return phi_->num_pairs() / num_actions_; }
    const FeatureMap& features() const { return *phi_; }

private:
    const FeatureMap* phi_;
    Index num_actions_;
    double beta_;
    Vector theta_cum_;
};

/// Returns theta if ||theta||_2 <= radius, else radius * theta / ||theta||_2.
Vector project_ball(const Vector& theta, double radius);

/// (1-gamma) phi(z0) + gamma phi(z_next) - phi(z_core).
Vector theta_gradient(const FeatureMap& phi, double gamma, Index z0, Index z_next, Index z_core);

/// m [r + gamma V(y) - Q(x,a)].
inline double lambda_gradient_coefficient(Index m, double reward, double gamma, double v_next,
                                          double q_core) {
    return static_cast<double>(m) * (reward + gamma * v_next - q_core);
}

/// Exponentiated-gradient step in the log domain on a single coordinate,
/// renormalized with max-subtraction. The result is a normalized log-weight
/// vector (logsumexp == 0).
Vector mirror_ascent_step(const Vector& lambda_log, Index index, double coefficient, double eta);

/// Theta_{t+1} = Theta_t + theta_t.
inline Vector policy_update(const Vector& theta_cum, const Vector& theta_t) { return theta_cum + theta_t; }

/// Normalized probabilities from log weights.
Vector softmax(const Vector& log_weights);

struct ThetaGradientSample {
    Vector g;
    Index z0 = 0;      // (x0, a0), x0 ~ nu0, a0 ~ pi_t
    Index z_core = 0;  // (x, a) ~ lambda_t
    Index z_next = 0;  // (x_bar, a_bar), x_bar ~ P(.|x,a), a_bar ~ pi_t
};

struct LambdaGradientSample {
    Index core_slot = 0;  // position in the core set
    double coefficient = 0.0;
    Index next_state = 0;
};

struct RoundRecord {
    Vector lambda;  // lambda_t (probabilities)
    Vector theta;   // theta_t
    std::uint64_t transition_queries = 0;
};

/// Per-round iterates plus the largest estimator norms seen during the run.
struct RunTrace {
    std::vector<RoundRecord> rounds;
    std::uint64_t J = 0;
    Vector theta_J;
    double max_theta_grad_norm = 0.0;
    double max_lambda_grad_abs = 0.0;
    std::uint64_t theta_grad_samples = 0;
    std::uint64_t lambda_grad_samples = 0;
    std::uint64_t theta_bound_violations = 0;
    std::uint64_t lambda_bound_violations = 0;
};

struct RunResult {
    SoftmaxPolicy policy;  // pi_J
    std::uint64_t J = 0;
    RunTrace trace;
    std::uint64_t transition_queries = 0;
    std::uint64_t init_queries = 0;
};

/// Stateful planner for one run. Single-threaded; independent instances may
/// run concurrently.
class Planner {
public:
    Planner(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const PlannerConfig& config);

    /// One draw of the theta-gradient estimator at (lambda_t, pi_t). Consumes
    /// exactly one transition query.
    ThetaGradientSample grad_theta_sample();

    /// K projected-SGD steps from theta_{t-1}; returns the average of the
    /// pre-update iterates theta^(1..K).
    Vector sgd_inner_loop();

    /// One draw of the sparse lambda-gradient estimator for Q_t = Phi theta_t.
    LambdaGradientSample grad_lambda_sample(const Vector& theta_t);

    void apply_lambda_step(const LambdaGradientSample& g);

    /// Runs one full round (SGD, mirror ascent, policy update).
    void step();

    RunResult finish() const;

    std::uint64_t round() const { return t_; }
    Vector lambda() const { return softmax(lambda_log_); }
    const Vector& lambda_log() const { return lambda_log_; }
    const Vector& theta_prev() const { return theta_prev_; }
    const SoftmaxPolicy& policy() const { return policy_; }
    const GenerativeModel& model() const { return model_; }
    const RunTrace& trace() const { return trace_; }
    const PlannerConfig& config() const { return config_; }

    /// 2R and m(1 + (1+gamma) R D_gamma).
    double theta_grad_bound() const;
    double lambda_grad_bound() const;

private:
    const Mdp* mdp_;
    const FeatureMap* phi_;
    const CoreSet* core_;
    PlannerConfig config_;
    GenerativeModel model_;
    RandomStream lambda_rng_;
    RandomStream policy_rng_;
    RandomStream core_rng_;
    RandomStream selection_rng_;

    std::uint64_t t_ = 0;  // completed rounds
    std::uint64_t J_ = 0;
    Vector lambda_log_;
    Vector lambda_cdf_;
    Vector theta_prev_;
    SoftmaxPolicy policy_;
    Vector theta_J_;
    RunTrace trace_;
    std::vector<double> scratch_;

    void refresh_lambda_cdf();
    Index sample_core_slot();
};

/// Executes all T rounds and returns pi_J, J and the trace.
RunResult run(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const PlannerConfig& config);

// ---------------------------------------------------------------------------
// Hyperparameter schedule
// ---------------------------------------------------------------------------

/// Inputs of the optimization-error bound. dkl_bound caps KL(lambda*||lambda_1)
/// (log m for uniform lambda_1).
struct BoundInputs {
    Index m = 1;
    double R = 1.0;
    double D_gamma = 1.0;
    Index num_actions = 2;
    double dkl_bound = 0.0;
};

/// K = ceil(T / (m^2 log(m |A|))).
std::uint64_t inner_loop_length(std::uint64_t T, Index m, Index num_actions);

/// eta, beta, alpha and K for a fixed horizon T.
PlannerConfig tuned_config_for_horizon(std::uint64_t T, const BoundInputs& in);

/// Sum of the six optimization-error terms for a config.
double optimization_error_bound(const PlannerConfig& cfg, const BoundInputs& in);

/// Smallest T whose tuned config has optimization_error_bound <= epsilon.
/// Throws ContractError when the required T (or T(K+1)) overflows 64 bits.
PlannerConfig tune_hyperparameters(double epsilon, Index m, double R, double D_gamma, Index num_actions,
                                   double dkl_bound);

}  // namespace coreplan
