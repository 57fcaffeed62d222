#include "coreplan/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace coreplan {
namespace {

std::mt19937_64 make_engine(std::uint64_t seed, StreamId id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                      static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(id),
                      RandomStream::kDerivationVersion};
    return std::mt19937_64(seq);
}

// First index whose cumulative weight exceeds target; falls back to the last
// index with positive mass when rounding pushes target past the total.
Index search_cdf(const double* cdf, Index n, double target) {
    const double* it = std::upper_bound(cdf, cdf + n, target);
    Index i = static_cast<Index>(it - cdf);
    if (i < n)
        return i;
    i = n - 1;
    while (i > 0 && cdf[i] == cdf[i - 1])
        --i;
    return i;
}

Index inverse_cdf(std::span<const double> w, double u) {
    const Index n = w.size();
    double total = 0.0;
    for (double x : w)
        total += x;
    const double target = u * total;
    double cum = 0.0;
    Index last_positive = 0;
    for (Index i = 0; i < n; ++i) {
        if (w[i] <= 0.0)
            continue;
        last_positive = i;
        cum += w[i];
        if (cum > target)
            return i;
    }
    return last_positive;
}

}  // namespace

RandomStream::RandomStream(std::uint64_t seed, StreamId id) : engine_(make_engine(seed, id)) {}

Index RandomStream::uniform_index(Index n) {
    require(n > 0, "uniform_index: n must be positive");
    const std::uint64_t range = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % range + 1) % range;
    std::uint64_t v = engine_();
    while (v > limit)
        v = engine_();
    return static_cast<Index>(v % range);
}

double RandomStream::normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RandomStream::exponential() { return -std::log(1.0 - uniform()); }

Vector dirichlet_ones(RandomStream& rng, Index n) {
    Vector v(static_cast<Eigen::Index>(n));
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
        v[i] = rng.exponential();
        s += v[i];
    }
    return v / s;
}

Index sample_categorical(std::span<const double> weights, RandomStream& rng) {
    require(!weights.empty(), "sample_categorical: empty weight vector");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0))
            throw ContractError("sample_categorical: negative weight");
        total += w;
    }
    require(std::abs(total - 1.0) <= 1e-9,
            "sample_categorical: weights must sum to 1 (got " + std::to_string(total) + ")");
    return inverse_cdf(weights, rng.uniform());
}

Index sample_categorical_log(std::span<const double> log_weights, RandomStream& rng) {
    require(!log_weights.empty(), "sample_categorical_log: empty weight vector");
    const double mx = *std::max_element(log_weights.begin(), log_weights.end());
    require(std::isfinite(mx), "sample_categorical_log: no finite log-weight");
    std::vector<double> w(log_weights.size());
    for (Index i = 0; i < w.size(); ++i)
        w[i] = std::exp(log_weights[i] - mx);
    return inverse_cdf(w, rng.uniform());
}

GenerativeModel::GenerativeModel(const Mdp& mdp, std::uint64_t seed)
    : mdp_(&mdp),
      cdf_(mdp.transition),
      nu0_cdf_(mdp.nu0),
      init_rng_(seed, StreamId::init),
      transition_rng_(seed, StreamId::transition) {
    mdp.validate();
    for (Eigen::Index r = 0; r < cdf_.rows(); ++r)
        for (Eigen::Index c = 1; c < cdf_.cols(); ++c)
            cdf_(r, c) += cdf_(r, c - 1);
    for (Eigen::Index c = 1; c < nu0_cdf_.size(); ++c)
        nu0_cdf_[c] += nu0_cdf_[c - 1];
}

Index GenerativeModel::sample_init() {
    ++init_queries_;
    const double total = nu0_cdf_[nu0_cdf_.size() - 1];
    return search_cdf(nu0_cdf_.data(), mdp_->num_states, init_rng_.uniform() * total);
}

GenerativeModel::Transition GenerativeModel::sample_next(Index x, Index a) {
    require(x < mdp_->num_states && a < mdp_->num_actions, "sample_next: state or action out of range");
    ++transition_queries_;
    const Index z = pair_index(x, a, mdp_->num_actions);
    const double* row = cdf_.data() + z * mdp_->num_states;
    const double total = row[mdp_->num_states - 1];
    const Index y = search_cdf(row, mdp_->num_states, transition_rng_.uniform() * total);
    return {mdp_->reward[static_cast<Eigen::Index>(z)], y};
}

}  // namespace coreplan
