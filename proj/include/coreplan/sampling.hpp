#pragma once

// Generative-model access: seeded random streams, categorical sampling and a
// metered sampler over an Mdp.

#include <cstdint>
#include <random>
#include <span>

#include "coreplan/common.hpp"
#include "coreplan/mdp.hpp"

namespace coreplan {

/// Algorithmic roles that own a random stream. The numeric values are part of
/// the reproducibility contract; never renumber them.
enum class StreamId : std::uint32_t {
    init = 1,        // x0 ~ nu0
    transition = 2,  // next-state draws of the generative model
    lambda = 3,      // (x,a) ~ lambda_t in the SGD inner loop
    policy = 4,      // a ~ pi_t(.|x)
    core = 5,        // (x,a) ~ Unif(core set) for the lambda gradient
    selection = 6,   // J ~ Unif{1..T}
    generator = 7,   // instance generators
    estimator = 8,   // randomized diagnostics (IBE sampling)
};

/// One named pseudorandom stream.
///
/// Engine: std::mt19937_64 seeded through std::seed_seq with the words
/// (seed low, seed high, stream id, kDerivationVersion). Both are fully
/// specified by the C++ standard, and uniforms are built from raw engine bits
/// (53-bit mantissa), so streams are identical on every conforming platform.
class RandomStream {
public:
    static constexpr std::uint32_t kDerivationVersion = 1;

    RandomStream(std::uint64_t seed, StreamId id);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), unbiased (rejection on the top bits).
    Index uniform_index(Index n);

    /// Standard normal via Box-Muller (two uniforms per draw).
    double normal();

    /// Exp(1) draw.
    double exponential();

private:
    std::mt19937_64 engine_;
};

/// Uniform draw from the probability simplex (Dirichlet(1,...,1)).
Vector dirichlet_ones(RandomStream& rng, Index n);

/// Inverse-CDF categorical draw with one uniform. Weights must be
/// nonnegative and sum to 1 within 1e-9.
Index sample_categorical(std::span<const double> weights, RandomStream& rng);

/// Same distribution from unnormalized log-weights (max-subtracted before
/// exponentiation). Consumes one uniform.
Index sample_categorical_log(std::span<const double> log_weights, RandomStream& rng);

/// Sampling access to nu0 and to P(.|x,a) with exact query accounting.
///
/// Rewards are the deterministic table entries r(x,a). Initial-state draws are
/// counted separately from transition queries. Not thread-safe; use one
/// instance per thread.
class GenerativeModel {
public:
    struct Transition {
        double reward;
        Index next_state;
    };

    GenerativeModel(const Mdp& mdp, std::uint64_t seed);

    Index sample_init();
    Transition sample_next(Index x, Index a);

    std::uint64_t transition_queries() const { return transition_queries_; }
    std::uint64_t init_queries() const { return init_queries_; }
    const Mdp& mdp() const { return *mdp_; }

private:
    const Mdp* mdp_;
    Matrix cdf_;     // cumulative transition rows
    Vector nu0_cdf_;
    RandomStream init_rng_;
    RandomStream transition_rng_;
    std::uint64_t transition_queries_ = 0;
    std::uint64_t init_queries_ = 0;
};

}  // namespace coreplan
