#include "coreplan/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "coreplan/kernels.hpp"

namespace coreplan {
namespace {

// Relative slack when counting estimator-norm violations; the bounds are
// exact in real arithmetic, this only absorbs rounding.
constexpr double kBoundSlack = 1e-12;

Index scan_cdf(std::span<const double> cdf, double target) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
    Index i = static_cast<Index>(it - cdf.begin());
    if (i < cdf.size())
        return i;
    i = cdf.size() - 1;
    while (i > 0 && cdf[i] == cdf[i - 1])
        --i;
    return i;
}

}  // namespace

void PlannerConfig::validate() const {
    require(T >= 1 && K >= 1, "PlannerConfig: T and K must be at least 1");
    require(std::isfinite(eta) && eta > 0.0, "PlannerConfig: eta must be positive");
    require(std::isfinite(beta) && beta > 0.0, "PlannerConfig: beta must be positive");
    require(std::isfinite(alpha) && alpha > 0.0, "PlannerConfig: alpha must be positive");
    require(std::isfinite(D_gamma) && D_gamma > 0.0, "PlannerConfig: D_gamma must be positive");
}

// ---------------------------------------------------------------------------

SoftmaxPolicy::SoftmaxPolicy(const FeatureMap& phi, Index num_actions, double beta)
    : SoftmaxPolicy(phi, num_actions, beta, Vector::Zero(phi.dim())) {}

SoftmaxPolicy::SoftmaxPolicy(const FeatureMap& phi, Index num_actions, double beta, Vector theta_cum)
    : phi_(&phi), num_actions_(num_actions), beta_(beta), theta_cum_(std::move(theta_cum)) {
    require(num_actions > 0 && phi.num_pairs() % num_actions == 0,
            "SoftmaxPolicy: feature rows must be a multiple of num_actions");
    require(static_cast<Index>(theta_cum_.size()) == phi.dim(), "SoftmaxPolicy: Theta must have length d");
}

void SoftmaxPolicy::probabilities(Index x, std::span<double> out) const {
    const auto& k = kernels::active();
    const Index A = num_actions_, d = phi_->dim();
    const double* rows = phi_->row(pair_index(x, 0, A));
    for (Index a = 0; a < A; ++a)
        out[a] = beta_ * k.dot(rows + a * d, theta_cum_.data(), d);
    const double mx = k.max_value(out.data(), A);
    double s = 0.0;
    for (Index a = 0; a < A; ++a) {
        out[a] = std::exp(out[a] - mx);
        s += out[a];
    }
    k.scale(1.0 / s, out.data(), A);
}

Index SoftmaxPolicy::sample(Index x, RandomStream& rng, std::span<double> scratch) const {
    probabilities(x, scratch);
    const double u = rng.uniform();
    double cum = 0.0;
    Index last_positive = 0;
    for (Index a = 0; a < num_actions_; ++a) {
        if (scratch[a] <= 0.0)
            continue;
        last_positive = a;
        cum += scratch[a];
        if (cum > u)
            return a;
    }
    return last_positive;
}

double SoftmaxPolicy::state_value(Index x, const Vector& theta, std::span<double> scratch) const {
    probabilities(x, scratch);
    const auto& k = kernels::active();
    const Index A = num_actions_, d = phi_->dim();
    const double* rows = phi_->row(pair_index(x, 0, A));
    double v = 0.0;
    for (Index a = 0; a < A; ++a)
        v += scratch[a] * k.dot(rows + a * d, theta.data(), d);
    return v;
}

Policy SoftmaxPolicy::materialize() const {
    Policy p;
    const Index X = num_states();
    p.probs.resize(X, num_actions_);
    for (Index x = 0; x < X; ++x)
        probabilities(x, std::span<double>(p.probs.data() + x * num_actions_, num_actions_));
    return p;
}

// ---------------------------------------------------------------------------

Vector project_ball(const Vector& theta, double radius) {
    require(radius > 0.0, "project_ball: radius must be positive");
    const double n2 = kernels::squared_norm({theta.data(), static_cast<Index>(theta.size())});
    if (n2 <= radius * radius)
        return theta;
    return theta * (radius / std::sqrt(n2));
}

Vector theta_gradient(const FeatureMap& phi, double gamma, Index z0, Index z_next, Index z_core) {
    const Index d = phi.dim();
    Vector g = Vector::Zero(d);
    kernels::active().axpy(1.0 - gamma, phi.row(z0), g.data(), d);
    kernels::active().axpy(gamma, phi.row(z_next), g.data(), d);
    kernels::active().axpy(-1.0, phi.row(z_core), g.data(), d);
    return g;
}

Vector softmax(const Vector& log_weights) {
    const double mx = log_weights.maxCoeff();
    Vector p = (log_weights.array() - mx).exp().matrix();
    return p / p.sum();
}

Vector mirror_ascent_step(const Vector& lambda_log, Index index, double coefficient, double eta) {
    require(index < static_cast<Index>(lambda_log.size()), "mirror_ascent_step: index out of range");
    Vector out = lambda_log;
    out[index] += eta * coefficient;
    const double mx = out.maxCoeff();
    const double lse = mx + std::log((out.array() - mx).exp().sum());
    out.array() -= lse;
    return out;
}

// ---------------------------------------------------------------------------

Planner::Planner(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const PlannerConfig& config)
    : mdp_(&mdp),
      phi_(&phi),
      core_(&core),
      config_(config),
      model_(mdp, config.seed),
      lambda_rng_(config.seed, StreamId::lambda),
      policy_rng_(config.seed, StreamId::policy),
      core_rng_(config.seed, StreamId::core),
      selection_rng_(config.seed, StreamId::selection),
      policy_(phi, mdp.num_actions, config.beta) {
    config.validate();
    require(phi.num_pairs() == mdp.num_pairs(), "Planner: feature rows must match X*A");
    require(core.size() >= 1, "Planner: core set must be nonempty");
    for (Index c : core.core_indices)
        require(c < mdp.num_pairs(), "Planner: core index out of range");

    const Index m = core.size();
    lambda_log_ = Vector::Constant(m, -std::log(static_cast<double>(m)));
    theta_prev_ = Vector::Zero(phi.dim());
    theta_J_ = Vector::Zero(phi.dim());
    scratch_.resize(mdp.num_actions);
    // J comes from its own stream, so drawing it up front gives the same value
    // as drawing it after the last round; this lets Theta_J be captured
    // without keeping every theta_t.
    J_ = 1 + selection_rng_.uniform_index(config.T);
    refresh_lambda_cdf();
    if (config.record_trace)
        trace_.rounds.reserve(config.T);
}

double Planner::theta_grad_bound() const { return 2.0 * phi_->radius; }

double Planner::lambda_grad_bound() const {
    return static_cast<double>(core_->size()) *
           (1.0 + (1.0 + mdp_->gamma) * phi_->radius * config_.D_gamma);
}

void Planner::refresh_lambda_cdf() {
    lambda_cdf_ = softmax(lambda_log_);
    for (Eigen::Index i = 1; i < lambda_cdf_.size(); ++i)
        lambda_cdf_[i] += lambda_cdf_[i - 1];
}

Index Planner::sample_core_slot() {
    const Index m = core_->size();
    const double target = lambda_rng_.uniform() * lambda_cdf_[m - 1];
    return scan_cdf({lambda_cdf_.data(), m}, target);
}

ThetaGradientSample Planner::grad_theta_sample() {
    const Index A = mdp_->num_actions;
    ThetaGradientSample s;
    const Index x0 = model_.sample_init();
    s.z0 = pair_index(x0, policy_.sample(x0, policy_rng_, scratch_), A);
    s.z_core = core_->core_indices[sample_core_slot()];
    const auto tr = model_.sample_next(pair_state(s.z_core, A), pair_action(s.z_core, A));
    s.z_next = pair_index(tr.next_state, policy_.sample(tr.next_state, policy_rng_, scratch_), A);
    s.g = theta_gradient(*phi_, mdp_->gamma, s.z0, s.z_next, s.z_core);

    const double norm = std::sqrt(kernels::squared_norm({s.g.data(), static_cast<Index>(s.g.size())}));
    trace_.max_theta_grad_norm = std::max(trace_.max_theta_grad_norm, norm);
    ++trace_.theta_grad_samples;
    if (norm > theta_grad_bound() * (1.0 + kBoundSlack) + kBoundSlack)
        ++trace_.theta_bound_violations;
    return s;
}

Vector Planner::sgd_inner_loop() {
    const Index d = phi_->dim();
    const auto& k = kernels::active();
    Vector theta = theta_prev_;
    Vector sum = Vector::Zero(d);
    for (std::uint64_t i = 0; i < config_.K; ++i) {
        k.axpy(1.0, theta.data(), sum.data(), d);
        const ThetaGradientSample s = grad_theta_sample();
        k.axpy(-config_.alpha, s.g.data(), theta.data(), d);
        const double n2 = k.squared_norm(theta.data(), d);
        if (n2 > config_.D_gamma * config_.D_gamma)
            k.scale(config_.D_gamma / std::sqrt(n2), theta.data(), d);
    }
    k.scale(1.0 / static_cast<double>(config_.K), sum.data(), d);
    return sum;
}

LambdaGradientSample Planner::grad_lambda_sample(const Vector& theta_t) {
    const Index A = mdp_->num_actions, d = phi_->dim();
    LambdaGradientSample s;
    s.core_slot = core_rng_.uniform_index(core_->size());
    const Index z = core_->core_indices[s.core_slot];
    const auto tr = model_.sample_next(pair_state(z, A), pair_action(z, A));
    s.next_state = tr.next_state;
    const double v_next = policy_.state_value(tr.next_state, theta_t, scratch_);
    const double q = kernels::active().dot(phi_->row(z), theta_t.data(), d);
    s.coefficient = lambda_gradient_coefficient(core_->size(), tr.reward, mdp_->gamma, v_next, q);

    const double mag = std::abs(s.coefficient);
    trace_.max_lambda_grad_abs = std::max(trace_.max_lambda_grad_abs, mag);
    ++trace_.lambda_grad_samples;
    if (mag > lambda_grad_bound() * (1.0 + kBoundSlack) + kBoundSlack)
        ++trace_.lambda_bound_violations;
    return s;
}

void Planner::apply_lambda_step(const LambdaGradientSample& g) {
    lambda_log_ = mirror_ascent_step(lambda_log_, g.core_slot, g.coefficient, config_.eta);
    refresh_lambda_cdf();
}

void Planner::step() {
    require(t_ < config_.T, "Planner::step: all rounds already executed");
    Vector lambda_t;
    if (config_.record_trace)
        lambda_t = softmax(lambda_log_);

    const Vector theta_t = sgd_inner_loop();
    apply_lambda_step(grad_lambda_sample(theta_t));
    policy_.accumulate(theta_t);
    theta_prev_ = theta_t;
    ++t_;

    if (config_.record_trace)
        trace_.rounds.push_back({std::move(lambda_t), theta_t, model_.transition_queries()});
    // Theta_J = theta_1 + ... + theta_{J-1}
    if (t_ + 1 == J_)
        theta_J_ = policy_.theta_cum();
}

RunResult Planner::finish() const {
    require(t_ == config_.T, "Planner::finish: run is incomplete");
    RunTrace trace = trace_;
    trace.J = J_;
    trace.theta_J = theta_J_;
    return RunResult{SoftmaxPolicy(*phi_, mdp_->num_actions, config_.beta, theta_J_), J_, std::move(trace),
                     model_.transition_queries(), model_.init_queries()};
}

RunResult run(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core, const PlannerConfig& config) {
    Planner planner(mdp, phi, core, config);
    for (std::uint64_t t = 0; t < config.T; ++t)
        planner.step();
    return planner.finish();
}

// ---------------------------------------------------------------------------

std::uint64_t inner_loop_length(std::uint64_t T, Index m, Index num_actions) {
    require(T >= 1, "inner_loop_length: T must be at least 1");
    require(m >= 1 && num_actions >= 1 && m * num_actions >= 2,
            "inner_loop_length: m*|A| must be at least 2");
    const double md = static_cast<double>(m);
    const double denom = md * md * std::log(md * static_cast<double>(num_actions));
    return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(static_cast<double>(T) / denom)));
}

namespace {

double floored_log(double x) { return std::max(std::log(x), 1e-12); }

double lambda_grad_scale(const BoundInputs& in) {
    return static_cast<double>(in.m) * (1.0 + 2.0 * in.R * in.D_gamma);
}

}  // namespace

PlannerConfig tuned_config_for_horizon(std::uint64_t T, const BoundInputs& in) {
    require(in.R > 0.0 && in.D_gamma > 0.0, "tuned_config_for_horizon: R and D_gamma must be positive");
    PlannerConfig cfg;
    cfg.T = T;
    cfg.K = inner_loop_length(T, in.m, in.num_actions);
    cfg.D_gamma = in.D_gamma;
    const double Td = static_cast<double>(T);
    const double g = lambda_grad_scale(in);
    const double dkl = std::max(in.dkl_bound, 1e-12);
    cfg.eta = std::sqrt(2.0 * dkl / (Td * g * g));
    cfg.beta = std::sqrt(2.0 * floored_log(static_cast<double>(in.num_actions)) /
                         (Td * in.R * in.R * in.D_gamma * in.D_gamma));
    cfg.alpha = in.D_gamma / (in.R * std::sqrt(static_cast<double>(cfg.K)));
    return cfg;
}

double optimization_error_bound(const PlannerConfig& cfg, const BoundInputs& in) {
    const double Td = static_cast<double>(cfg.T), Kd = static_cast<double>(cfg.K);
    const double R = in.R, D = in.D_gamma;
    const double g = lambda_grad_scale(in);
    const double log_a = std::log(static_cast<double>(in.num_actions));
    return in.dkl_bound / (cfg.eta * Td) + log_a / (cfg.beta * Td) + 2.0 * D * D / (cfg.alpha * Kd) +
           cfg.eta * g * g / 2.0 + cfg.beta * R * R * D * D / 2.0 + 2.0 * cfg.alpha * R * R;
}

PlannerConfig tune_hyperparameters(double epsilon, Index m, double R, double D_gamma, Index num_actions,
                                   double dkl_bound) {
    require(epsilon > 0.0 && std::isfinite(epsilon), "tune_hyperparameters: epsilon must be positive");
    const BoundInputs in{m, R, D_gamma, num_actions, dkl_bound};
    auto meets = [&](std::uint64_t T) {
        return optimization_error_bound(tuned_config_for_horizon(T, in), in) <= epsilon;
    };

    constexpr std::uint64_t kMaxT = std::uint64_t{1} << 62;
    std::uint64_t hi = 1;
    while (!meets(hi)) {
        if (hi >= kMaxT)
            throw ContractError("tune_hyperparameters: epsilon too small, T exceeds the integer range");
        hi *= 2;
    }
    std::uint64_t lo = hi / 2 + 1;  // meets(hi / 2) is false unless hi == 1
    if (hi == 1)
        lo = 1;
    while (lo < hi) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (meets(mid))
            hi = mid;
        else
            lo = mid + 1;
    }
    PlannerConfig cfg = tuned_config_for_horizon(hi, in);
    const unsigned __int128 queries = static_cast<unsigned __int128>(cfg.T) * (cfg.K + 1);
    if (queries > std::numeric_limits<std::uint64_t>::max())
        throw ContractError("tune_hyperparameters: epsilon too small, T(K+1) exceeds the integer range");
    return cfg;
}

}  // namespace coreplan
