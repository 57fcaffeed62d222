#include "coreplan/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace coreplan::kernels {
namespace {

Backend detect() {
    if (const char* env = std::getenv("COREPLAN_SIMD")) {
        const std::string v(env);
        if (v == "scalar")
            return Backend::scalar;
        if (v == "avx2" && cpu_supports(Backend::avx2))
            return Backend::avx2;
    }
    return cpu_supports(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

std::atomic<int>& selected() {
    static std::atomic<int> b{static_cast<int>(detect())};
    return b;
}

}  // namespace

bool cpu_supports(Backend b) {
    switch (b) {
    case Backend::scalar:
        return true;
    case Backend::avx2:
#if defined(__x86_64__) || defined(__i386__)
        return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
               __builtin_cpu_supports("fma");
#else
        return false;
#endif
    }
    return false;
}

Backend active_backend() { return static_cast<Backend>(selected().load(std::memory_order_relaxed)); }

void force_backend(Backend b) {
    if (!cpu_supports(b))
        b = Backend::scalar;
    selected().store(static_cast<int>(b), std::memory_order_relaxed);
}

std::string_view backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

const KernelTable& active() {
    if (active_backend() == Backend::avx2)
        return *avx2_table();
    return scalar_table();
}

}  // namespace coreplan::kernels
