#pragma once

// Inner-loop arithmetic used by the planner and the exact oracles.
//
// Every kernel has a scalar reference implementation. On x86-64 an AVX2+FMA
// variant is compiled into a separate translation unit and selected at run
// time when the CPU supports it. The environment variable COREPLAN_SIMD
// (values: "scalar", "avx2", "auto") overrides the choice.
//
// Vector variants reassociate sums, so results differ from the scalar path in
// the last few ulps. A run is bit-reproducible for a fixed backend; use
// COREPLAN_SIMD=scalar when results must match across machines.

#include <cstddef>
#include <span>
#include <string_view>

namespace coreplan::kernels {

enum class Backend { scalar, avx2 };

struct KernelTable {
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    void (*scale)(double alpha, double* x, std::size_t n);
    double (*squared_norm)(const double* x, std::size_t n);
    // out[i] = <row i of the row-major (rows x cols) matrix m, x>
    void (*gemv)(const double* m, std::size_t rows, std::size_t cols, const double* x,
                 double* out);
    double (*max_value)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();

/// nullptr when the variant was not compiled in.
const KernelTable* avx2_table();

bool cpu_supports(Backend b);

/// Backend picked on first use: COREPLAN_SIMD if set, else the widest one the
/// CPU supports.
Backend active_backend();

/// Switches the process-wide backend. Intended for equivalence tests; must
/// not be called while other threads are running kernels.
void force_backend(Backend b);

std::string_view backend_name(Backend b);

const KernelTable& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
    return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active().axpy(alpha, x.data(), y.data(), x.size());
}

inline void scale(double alpha, std::span<double> x) { active().scale(alpha, x.data(), x.size()); }

inline double squared_norm(std::span<const double> x) {
    return active().squared_norm(x.data(), x.size());
}

inline double max_value(std::span<const double> x) { return active().max_value(x.data(), x.size()); }

}  // namespace coreplan::kernels
