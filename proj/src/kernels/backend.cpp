#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "capsed/kernels/kernels.hpp"

namespace capsed::kernels {

namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend initial_backend() {
    const char* env = std::getenv("CAPSED_KERNELS");
    if (env && std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (env && std::strcmp(env, "avx2") == 0) {
        if (!cpu_has_avx2()) throw std::runtime_error("CAPSED_KERNELS=avx2: CPU lacks AVX2/FMA");
        return Backend::avx2;
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend> g_backend{initial_backend()};

}  // namespace

bool avx2_supported() { return cpu_has_avx2(); }

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) {
    if (b == Backend::avx2 && !cpu_has_avx2())
        throw std::runtime_error("kernel backend avx2 unavailable on this CPU");
    g_backend.store(b, std::memory_order_relaxed);
}

const KernelTable& active() {
#if defined(__x86_64__) || defined(_M_X64)
    return g_backend.load(std::memory_order_relaxed) == Backend::avx2 ? avx2_table()
                                                                      : scalar_table();
#else
    return scalar_table();
#endif
}

}  // namespace capsed::kernels
