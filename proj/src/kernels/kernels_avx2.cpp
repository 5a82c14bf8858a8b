// AVX2 kernel variants. Compiled with -mavx2 -mfma for this translation unit
// only; selected at runtime after a cpuid check. Elementwise kernels use
// mul/add (no FMA) so they round identically to the scalar references.
// Reductions and matmuls use FMA and lane-wise accumulators; they differ from
// scalar in summation order and are compared under tolerance.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "capsed/kernels/kernels.hpp"
#include "capsed/kernels/parallel.hpp"

namespace capsed::kernels {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void v_add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(const double* a, double s, double* out, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void v_axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        // mul+add, not fmadd: matches scalar rounding
        const __m256d t = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), t));
    }
    for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

double v_dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double v_sum(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i];
    return s;
}

double v_sumsq(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d x = _mm256_loadu_pd(a + i);
        acc = _mm256_fmadd_pd(x, x, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i] * a[i];
    return s;
}

void v_relu_fwd(const double* x, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_bwd(const double* x, const double* gy, double* gx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        const __m256d old = _mm256_loadu_pd(gx + i);
        const __m256d upd = _mm256_add_pd(old, _mm256_loadu_pd(gy + i));
        // blend, not add-of-zero: keeps untouched lanes bit-identical (-0.0)
        _mm256_storeu_pd(gx + i, _mm256_blendv_pd(old, upd, mask));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0) gx[i] += gy[i];
}

void v_adadelta(double* p, const double* g, double* eg2, double* ed2,
                double rho, double eps, double lr, std::size_t n) {
    const __m256d vrho = _mm256_set1_pd(rho);
    const __m256d vomr = _mm256_set1_pd(1.0 - rho);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d vneg = _mm256_set1_pd(-0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gv = _mm256_loadu_pd(g + i);
        const __m256d g2 = _mm256_mul_pd(gv, gv);
        __m256d e = _mm256_add_pd(_mm256_mul_pd(vrho, _mm256_loadu_pd(eg2 + i)),
                                  _mm256_mul_pd(vomr, g2));
        _mm256_storeu_pd(eg2 + i, e);
        const __m256d num = _mm256_sqrt_pd(_mm256_add_pd(_mm256_loadu_pd(ed2 + i), veps));
        const __m256d den = _mm256_sqrt_pd(_mm256_add_pd(e, veps));
        // d = -(num/den)*g, same operation order as the scalar kernel
        const __m256d d = _mm256_xor_pd(_mm256_mul_pd(_mm256_div_pd(num, den), gv), vneg);
        const __m256d d2 = _mm256_mul_pd(d, d);
        _mm256_storeu_pd(ed2 + i, _mm256_add_pd(_mm256_mul_pd(vrho, _mm256_loadu_pd(ed2 + i)),
                                                _mm256_mul_pd(vomr, d2)));
        _mm256_storeu_pd(p + i,
                         _mm256_add_pd(_mm256_loadu_pd(p + i), _mm256_mul_pd(vlr, d)));
    }
    for (; i < n; ++i) {
        eg2[i] = rho * eg2[i] + (1.0 - rho) * (g[i] * g[i]);
        const double d = -(std::sqrt(ed2[i] + eps) / std::sqrt(eg2[i] + eps)) * g[i];
        ed2[i] = rho * ed2[i] + (1.0 - rho) * (d * d);
        p[i] = p[i] + lr * d;
    }
}

// NN microkernel: 4 rows x 8 columns of C held in registers across the k loop.
void v_matmul_nn(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    parallel_for(m, 8, [&](std::size_t i0, std::size_t i1) {
        std::size_t i = i0;
        for (; i + 4 <= i1; i += 4) {
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256d c00, c01, c10, c11, c20, c21, c30, c31;
                if (accumulate) {
                    c00 = _mm256_loadu_pd(C + (i + 0) * n + j);
                    c01 = _mm256_loadu_pd(C + (i + 0) * n + j + 4);
                    c10 = _mm256_loadu_pd(C + (i + 1) * n + j);
                    c11 = _mm256_loadu_pd(C + (i + 1) * n + j + 4);
                    c20 = _mm256_loadu_pd(C + (i + 2) * n + j);
                    c21 = _mm256_loadu_pd(C + (i + 2) * n + j + 4);
                    c30 = _mm256_loadu_pd(C + (i + 3) * n + j);
                    c31 = _mm256_loadu_pd(C + (i + 3) * n + j + 4);
                } else {
                    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_pd();
                }
                for (std::size_t l = 0; l < k; ++l) {
                    const __m256d b0 = _mm256_loadu_pd(B + l * n + j);
                    const __m256d b1 = _mm256_loadu_pd(B + l * n + j + 4);
                    const __m256d a0 = _mm256_set1_pd(A[(i + 0) * k + l]);
                    const __m256d a1 = _mm256_set1_pd(A[(i + 1) * k + l]);
                    const __m256d a2 = _mm256_set1_pd(A[(i + 2) * k + l]);
                    const __m256d a3 = _mm256_set1_pd(A[(i + 3) * k + l]);
                    c00 = _mm256_fmadd_pd(a0, b0, c00);
                    c01 = _mm256_fmadd_pd(a0, b1, c01);
                    c10 = _mm256_fmadd_pd(a1, b0, c10);
                    c11 = _mm256_fmadd_pd(a1, b1, c11);
                    c20 = _mm256_fmadd_pd(a2, b0, c20);
                    c21 = _mm256_fmadd_pd(a2, b1, c21);
                    c30 = _mm256_fmadd_pd(a3, b0, c30);
                    c31 = _mm256_fmadd_pd(a3, b1, c31);
                }
                _mm256_storeu_pd(C + (i + 0) * n + j, c00);
                _mm256_storeu_pd(C + (i + 0) * n + j + 4, c01);
                _mm256_storeu_pd(C + (i + 1) * n + j, c10);
                _mm256_storeu_pd(C + (i + 1) * n + j + 4, c11);
                _mm256_storeu_pd(C + (i + 2) * n + j, c20);
                _mm256_storeu_pd(C + (i + 2) * n + j + 4, c21);
                _mm256_storeu_pd(C + (i + 3) * n + j, c30);
                _mm256_storeu_pd(C + (i + 3) * n + j + 4, c31);
            }
            // column tail
            for (; j < n; ++j) {
                for (std::size_t r = 0; r < 4; ++r) {
                    double acc = accumulate ? C[(i + r) * n + j] : 0.0;
                    const double* a = A + (i + r) * k;
                    for (std::size_t l = 0; l < k; ++l) acc = std::fma(a[l], B[l * n + j], acc);
                    C[(i + r) * n + j] = acc;
                }
            }
        }
        // row tail
        for (; i < i1; ++i) {
            double* c = C + i * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d acc = accumulate ? _mm256_loadu_pd(c + j) : _mm256_setzero_pd();
                for (std::size_t l = 0; l < k; ++l)
                    acc = _mm256_fmadd_pd(_mm256_set1_pd(A[i * k + l]),
                                          _mm256_loadu_pd(B + l * n + j), acc);
                _mm256_storeu_pd(c + j, acc);
            }
            for (; j < n; ++j) {
                double acc = accumulate ? c[j] : 0.0;
                for (std::size_t l = 0; l < k; ++l) acc = std::fma(A[i * k + l], B[l * n + j], acc);
                c[j] = acc;
            }
        }
    });
}

void v_matmul_nt(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    parallel_for(m, 8, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const double* a = A + i * k;
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* b = B + j * k;
                __m256d acc = _mm256_setzero_pd();
                std::size_t l = 0;
                for (; l + 4 <= k; l += 4)
                    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + l), _mm256_loadu_pd(b + l), acc);
                double s = hsum(acc);
                for (; l < k; ++l) s += a[l] * b[l];
                c[j] = accumulate ? c[j] + s : s;
            }
        }
    });
}

void v_matmul_tn(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    parallel_for(m, 8, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            double* c = C + i * n;
            if (!accumulate)
                for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
            for (std::size_t l = 0; l < k; ++l) {
                const __m256d av = _mm256_set1_pd(A[l * m + i]);
                const double* b = B + l * n;
                std::size_t j = 0;
                for (; j + 4 <= n; j += 4)
                    _mm256_storeu_pd(c + j,
                                     _mm256_fmadd_pd(av, _mm256_loadu_pd(b + j),
                                                     _mm256_loadu_pd(c + j)));
                for (; j < n; ++j) c[j] = std::fma(A[l * m + i], b[j], c[j]);
            }
        }
    });
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable table = {
        "avx2",   v_add,      v_sub,      v_mul,      v_scale,    v_axpy,
        v_dot,    v_sum,      v_sumsq,    v_relu_fwd, v_relu_bwd, v_adadelta,
        v_matmul_nn, v_matmul_nt, v_matmul_tn,
    };
    return table;
}

}  // namespace capsed::kernels

#endif  // x86-64
