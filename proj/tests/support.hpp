#pragma once

// Small helpers shared by the unit tests. Oracles live in the individual
// test files next to the checks that use them.

#include <algorithm>
#include <vector>

#include "coreplan/mdp.hpp"
#include "coreplan/sampling.hpp"

namespace coreplan::testing {

inline Policy random_policy(RandomStream& rng, Index X, Index A) {
    Policy p;
    p.probs.resize(X, A);
    for (Index x = 0; x < X; ++x)
        p.probs.row(x) = dirichlet_ones(rng, A).transpose();
    return p;
}

inline Vector random_vector(RandomStream& rng, Index n, double lo = -1.0, double hi = 1.0) {
    Vector v(n);
    for (Index i = 0; i < n; ++i)
        v[i] = lo + (hi - lo) * rng.uniform();
    return v;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace coreplan::testing
