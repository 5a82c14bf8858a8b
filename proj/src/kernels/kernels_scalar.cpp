#include <cmath>
#include <cstddef>

#include "capsed/kernels/kernels.hpp"
#include "capsed/kernels/parallel.hpp"

// Reference kernels. Straight loops, no fusion (builds use -ffp-contract=off),
// so the vector variants can be checked against them exactly where the
// contract promises bit equality.

namespace capsed::kernels {
namespace {

void s_add(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(const double* a, double s, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void s_axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

double s_dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double s_sum(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double s_sumsq(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

void s_relu_fwd(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_bwd(const double* x, const double* gy, double* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (x[i] > 0.0) gx[i] += gy[i];
}

void s_adadelta(double* p, const double* g, double* eg2, double* ed2,
                double rho, double eps, double lr, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        eg2[i] = rho * eg2[i] + (1.0 - rho) * (g[i] * g[i]);
        const double d = -(std::sqrt(ed2[i] + eps) / std::sqrt(eg2[i] + eps)) * g[i];
        ed2[i] = rho * ed2[i] + (1.0 - rho) * (d * d);
        p[i] = p[i] + lr * d;
    }
}

void s_matmul_nn(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    parallel_for(m, 16, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            double* c = C + i * n;
            if (!accumulate)
                for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
            const double* a = A + i * k;
            for (std::size_t l = 0; l < k; ++l) {
                const double av = a[l];
                const double* b = B + l * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
            }
        }
    });
}

void s_matmul_nt(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    parallel_for(m, 16, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const double* a = A + i * k;
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* b = B + j * k;
                double acc = 0.0;
                for (std::size_t l = 0; l < k; ++l) acc += a[l] * b[l];
                c[j] = accumulate ? c[j] + acc : acc;
            }
        }
    });
}

void s_matmul_tn(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    // C[i,j] += sum_l A[l,i] * B[l,j]; parallel over rows of C.
    parallel_for(m, 16, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            double* c = C + i * n;
            if (!accumulate)
                for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
            for (std::size_t l = 0; l < k; ++l) {
                const double av = A[l * m + i];
                const double* b = B + l * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
            }
        }
    });
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table = {
        "scalar", s_add,      s_sub,      s_mul,      s_scale,    s_axpy,
        s_dot,    s_sum,      s_sumsq,    s_relu_fwd, s_relu_bwd, s_adadelta,
        s_matmul_nn, s_matmul_nt, s_matmul_tn,
    };
    return table;
}

}  // namespace capsed::kernels
