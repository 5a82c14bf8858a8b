#pragma once

#include <cstddef>
#include <string>

namespace capsed::kernels {

// Inner-loop kernel table. Every entry has a scalar reference implementation
// and (on x86-64 with AVX2) a vectorized variant; the active table is chosen
// once at startup from cpuid, overridable via CAPSED_KERNELS=scalar|avx2|auto
// or set_backend(). Elementwise kernels are bit-identical across backends;
// reduction kernels (dot/sumsq/matmul) may differ in summation order and are
// equivalence-tested under tolerance.
struct KernelTable {
    const char* name;

    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*scale)(const double* a, double s, double* out, std::size_t n);
    // y += a * x
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* a, std::size_t n);
    double (*sumsq)(const double* a, std::size_t n);
    void (*relu_fwd)(const double* x, double* y, std::size_t n);
    // gx += gy where x > 0
    void (*relu_bwd)(const double* x, const double* gy, double* gx, std::size_t n);
    // AdaDelta recurrences, elementwise over one parameter tensor:
    //   eg2 = rho*eg2 + (1-rho)*g^2
    //   d   = -sqrt(ed2+eps)/sqrt(eg2+eps) * g
    //   ed2 = rho*ed2 + (1-rho)*d^2
    //   p  += lr*d
    void (*adadelta)(double* p, const double* g, double* eg2, double* ed2,
                     double rho, double eps, double lr, std::size_t n);

    // C[m,n] (+)= A[m,k] * B[k,n], row-major.
    void (*matmul_nn)(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t k, std::size_t n, bool accumulate);
    // C[m,n] (+)= A[m,k] * B[n,k]^T
    void (*matmul_nt)(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t k, std::size_t n, bool accumulate);
    // C[m,n] (+)= A[k,m]^T * B[k,n]
    void (*matmul_tn)(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t k, std::size_t n, bool accumulate);
};

enum class Backend { scalar, avx2 };

bool avx2_supported();

// Active table (initialized lazily from CAPSED_KERNELS / cpuid).
const KernelTable& active();
Backend active_backend();
void set_backend(Backend b);  // throws if unsupported

const KernelTable& scalar_table();
const KernelTable& avx2_table();  // valid only if avx2_supported()

}  // namespace capsed::kernels
