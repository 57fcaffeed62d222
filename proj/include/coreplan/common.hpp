#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace coreplan {

/// Dense column vector used for every state, state-action and parameter vector.
using Vector = Eigen::VectorXd;

/// Row-major dense matrix. Rows of the transition table and of the feature
/// matrix are contiguous, which the kernels rely on.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = std::size_t;

/// Thrown when an input violates a documented precondition (dimension
/// mismatch, non-stochastic rows, out-of-range index, ...).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when persisted artifacts do not belong together (instance hash
/// mismatch between a trace and the instance it is audited against).
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond)
        throw ContractError(what);
}

/// State-action pairs are laid out x-major, a-minor: pair (x, a) lives at
/// x * num_actions + a. Every table in the library uses this layout.
constexpr Index pair_index(Index x, Index a, Index num_actions) noexcept {
    return x * num_actions + a;
}

constexpr Index pair_state(Index z, Index num_actions) noexcept { return z / num_actions; }
constexpr Index pair_action(Index z, Index num_actions) noexcept { return z % num_actions; }

}  // namespace coreplan
