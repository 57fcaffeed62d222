#include "coreplan/kernels.hpp"

#include <algorithm>
#include <limits>

namespace coreplan::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        s += a[i] * b[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        y[i] += alpha * x[i];
}

void scale_scalar(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        x[i] *= alpha;
}

double squared_norm_scalar(const double* x, std::size_t n) { return dot_scalar(x, x, n); }

void gemv_scalar(const double* m, std::size_t rows, std::size_t cols, const double* x, double* out) {
    for (std::size_t r = 0; r < rows; ++r)
        out[r] = dot_scalar(m + r * cols, x, cols);
}

double max_value_scalar(const double* x, std::size_t n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        m = std::max(m, x[i]);
    return m;
}

constexpr KernelTable kScalar{
    dot_scalar, axpy_scalar, scale_scalar, squared_norm_scalar, gemv_scalar, max_value_scalar,
};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace coreplan::kernels
