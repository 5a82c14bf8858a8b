#include "capsed/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "capsed/common.hpp"
#include "capsed/kernels/kernels.hpp"

namespace capsed::ops {

namespace {

using kernels::active;

std::string shape_str(const std::vector<index_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
    throw ShapeError(std::string(op) + ": " + detail);
}

void check_same_tape(const char* op, const Var& a, const Var& b) {
    if (a.tape != b.tape) shape_fail(op, "operands recorded on different tapes");
}

// NaN/Inf is an error state, never silent. Fast vectorized sum first; an
// exact scan confirms before throwing (a finite sum can only be non-finite
// through a genuinely non-finite element or an overflowing magnitude, and
// the scan distinguishes the two).
void check_finite(const Tensor& t, const char* op) {
    const double s = active().sum(t.data(), static_cast<size_t>(t.size()));
    if (std::isfinite(s)) return;
    for (index_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i]))
            throw NumericError(std::string(op) + ": non-finite value at flat index " +
                               std::to_string(i));
}

Tape::Node& node_of(const Var& v) { return v.tape->node(v.id); }

bool rq(const Var& v) { return v.valid() && v.tape->requires_grad(v); }

// Upstream gradient of an output node inside a backward closure.
const Tensor& upstream(const Var& out) { return node_of(out).grad; }

Tensor& grad_acc(const Var& v) { return v.tape->grad_ref(v.id); }

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
    check_same_tape("add", a, b);
    if (!a.value().same_shape(b.value()))
        shape_fail("add", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    active().add(a.value().data(), b.value().data(), out.data(), static_cast<size_t>(out.size()));
    check_finite(out, "add");
    Var o = a.tape->push(std::move(out), rq(a) || rq(b));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, b, o] {
            const Tensor& g = upstream(o);
            const size_t n = static_cast<size_t>(g.size());
            if (rq(a)) active().axpy(1.0, g.data(), grad_acc(a).data(), n);
            if (rq(b)) active().axpy(1.0, g.data(), grad_acc(b).data(), n);
        };
    }
    return o;
}

Var sub(Var a, Var b) {
    check_same_tape("sub", a, b);
    if (!a.value().same_shape(b.value()))
        shape_fail("sub", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    active().sub(a.value().data(), b.value().data(), out.data(), static_cast<size_t>(out.size()));
    check_finite(out, "sub");
    Var o = a.tape->push(std::move(out), rq(a) || rq(b));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, b, o] {
            const Tensor& g = upstream(o);
            const size_t n = static_cast<size_t>(g.size());
            if (rq(a)) active().axpy(1.0, g.data(), grad_acc(a).data(), n);
            if (rq(b)) active().axpy(-1.0, g.data(), grad_acc(b).data(), n);
        };
    }
    return o;
}

Var mul(Var a, Var b) {
    check_same_tape("mul", a, b);
    if (!a.value().same_shape(b.value()))
        shape_fail("mul", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    active().mul(a.value().data(), b.value().data(), out.data(), static_cast<size_t>(out.size()));
    check_finite(out, "mul");
    Var o = a.tape->push(std::move(out), rq(a) || rq(b));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, b, o] {
            const Tensor& g = upstream(o);
            const index_t n = g.size();
            if (rq(a)) {
                Tensor& ga = grad_acc(a);
                const Tensor& bv = b.value();
                for (index_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
            }
            if (rq(b)) {
                Tensor& gb = grad_acc(b);
                const Tensor& av = a.value();
                for (index_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
            }
        };
    }
    return o;
}

Var scalar_mul(Var a, double s) {
    Tensor out(a.shape());
    active().scale(a.value().data(), s, out.data(), static_cast<size_t>(out.size()));
    check_finite(out, "scalar_mul");
    Var o = a.tape->push(std::move(out), rq(a));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, o, s] {
            const Tensor& g = upstream(o);
            active().axpy(s, g.data(), grad_acc(a).data(), static_cast<size_t>(g.size()));
        };
    }
    return o;
}

Var sum(Var a) {
    Tensor out = Tensor::scalar(active().sum(a.value().data(), static_cast<size_t>(a.value().size())));
    check_finite(out, "sum");
    Var o = a.tape->push(std::move(out), rq(a));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, o] {
            const double g0 = upstream(o)[0];
            Tensor& ga = grad_acc(a);
            for (index_t i = 0; i < ga.size(); ++i) ga[i] += g0;
        };
    }
    return o;
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    Tensor out =
        Tensor::scalar(active().sum(a.value().data(), static_cast<size_t>(a.value().size())) / n);
    check_finite(out, "mean");
    Var o = a.tape->push(std::move(out), rq(a));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, o, n] {
            const double g0 = upstream(o)[0] / n;
            Tensor& ga = grad_acc(a);
            for (index_t i = 0; i < ga.size(); ++i) ga[i] += g0;
        };
    }
    return o;
}

Var reshape(Var a, std::vector<index_t> shape) {
    if (Tensor::shape_size(shape) != a.value().size())
        shape_fail("reshape", "size mismatch: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Var o = a.tape->push(a.value().reshaped(shape), rq(a));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, o] {
            const Tensor& g = upstream(o);
            active().axpy(1.0, g.data(), grad_acc(a).data(), static_cast<size_t>(g.size()));
        };
    }
    return o;
}

Var detach(Var a) { return a.tape->constant(a.value()); }

Var relu(Var a) {
    Tensor out(a.shape());
    active().relu_fwd(a.value().data(), out.data(), static_cast<size_t>(out.size()));
    check_finite(out, "relu");
    Var o = a.tape->push(std::move(out), rq(a));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, o] {
            const Tensor& g = upstream(o);
            active().relu_bwd(a.value().data(), g.data(), grad_acc(a).data(),
                              static_cast<size_t>(g.size()));
        };
    }
    return o;
}

Var tanh_act(Var a) {
    Tensor out(a.shape());
    const Tensor& x = a.value();
    for (index_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
    check_finite(out, "tanh");
    Var o = a.tape->push(std::move(out), rq(a));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, o] {
            const Tensor& g = upstream(o);
            const Tensor& y = o.value();
            Tensor& ga = grad_acc(a);
            for (index_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        };
    }
    return o;
}

Var sigmoid(Var a) {
    Tensor out(a.shape());
    const Tensor& x = a.value();
    for (index_t i = 0; i < x.size(); ++i) {
        const double z = x[i];
        out[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    check_finite(out, "sigmoid");
    Var o = a.tape->push(std::move(out), rq(a));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, o] {
            const Tensor& g = upstream(o);
            const Tensor& y = o.value();
            Tensor& ga = grad_acc(a);
            for (index_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        };
    }
    return o;
}

Var dropout(Var a, double rate, bool train, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ShapeError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!train || rate == 0.0) return a;  // inference is identity
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor mask(a.shape());
    for (index_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    Tensor out(a.shape());
    active().mul(a.value().data(), mask.data(), out.data(), static_cast<size_t>(out.size()));
    check_finite(out, "dropout");
    Var o = a.tape->push(std::move(out), rq(a));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [a, o, mask = std::move(mask)] {
            const Tensor& g = upstream(o);
            Tensor& ga = grad_acc(a);
            for (index_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
        };
    }
    return o;
}

Var l2_penalty(const std::vector<Var>& params, double lambda) {
    if (params.empty()) throw ShapeError("l2_penalty: no parameters given");
    Tape* tape = params.front().tape;
    double acc = 0.0;
    bool needs = false;
    for (const Var& p : params) {
        if (p.tape != tape) shape_fail("l2_penalty", "parameters recorded on different tapes");
        acc += active().sumsq(p.value().data(), static_cast<size_t>(p.value().size()));
        needs = needs || rq(p);
    }
    Tensor out = Tensor::scalar(lambda * acc);
    check_finite(out, "l2_penalty");
    Var o = tape->push(std::move(out), needs);
    if (node_of(o).requires_grad) {
        node_of(o).backward = [params, o, lambda] {
            const double g0 = upstream(o)[0];
            for (const Var& p : params) {
                if (!rq(p)) continue;
                active().axpy(2.0 * lambda * g0, p.value().data(), grad_acc(p).data(),
                              static_cast<size_t>(p.value().size()));
            }
        };
    }
    return o;
}

// ------------------------------------------------------------------- softmax

Var softmax_axis(Var a, size_t axis) {
    const auto& shape = a.shape();
    if (axis >= shape.size()) shape_fail("softmax_axis", "axis out of range");
    const index_t L = shape[axis];
    index_t inner = 1, outer = 1;
    for (size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    for (size_t d = 0; d < axis; ++d) outer *= shape[d];

    const Tensor& x = a.value();
    Tensor out(shape);
    for (index_t o = 0; o < outer; ++o) {
        for (index_t i = 0; i < inner; ++i) {
            const index_t base = o * L * inner + i;
            double mx = x[base];
            for (index_t l = 1; l < L; ++l) mx = std::max(mx, x[base + l * inner]);
            double denom = 0.0;
            for (index_t l = 0; l < L; ++l) {
                const double e = std::exp(x[base + l * inner] - mx);
                out[base + l * inner] = e;
                denom += e;
            }
            for (index_t l = 0; l < L; ++l) out[base + l * inner] /= denom;
        }
    }
    check_finite(out, "softmax_axis");
    Var res = a.tape->push(std::move(out), rq(a));
    if (node_of(res).requires_grad) {
        node_of(res).backward = [a, res, L, inner, outer] {
            const Tensor& g = upstream(res);
            const Tensor& y = res.value();
            Tensor& ga = grad_acc(a);
            for (index_t o = 0; o < outer; ++o) {
                for (index_t i = 0; i < inner; ++i) {
                    const index_t base = o * L * inner + i;
                    double gy = 0.0;
                    for (index_t l = 0; l < L; ++l) gy += g[base + l * inner] * y[base + l * inner];
                    for (index_t l = 0; l < L; ++l) {
                        const index_t k = base + l * inner;
                        ga[k] += y[k] * (g[k] - gy);
                    }
                }
            }
        };
    }
    return res;
}

// ------------------------------------------------------------- dense / conv

Var dense(Var input, Var weight, Var bias) {
    check_same_tape("dense", input, weight);
    const auto& xs = input.shape();
    const auto& ws = weight.shape();
    if (ws.size() != 2) shape_fail("dense", "weight must be 2-d, got " + shape_str(ws));
    const index_t din = ws[0], dout = ws[1];
    if (xs.back() != din)
        shape_fail("dense", "inner dimension mismatch: input " + shape_str(xs) + " vs weight " +
                                shape_str(ws));
    if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != dout))
        shape_fail("dense", "bias must be [Dout]");
    const index_t rows = input.value().size() / din;

    std::vector<index_t> out_shape(xs.begin(), xs.end() - 1);
    out_shape.push_back(dout);
    Tensor out(out_shape);
    active().matmul_nn(input.value().data(), weight.value().data(), out.data(),
                       static_cast<size_t>(rows), static_cast<size_t>(din),
                       static_cast<size_t>(dout), false);
    if (bias.valid()) {
        const Tensor& b = bias.value();
        for (index_t r = 0; r < rows; ++r)
            active().add(out.data() + r * dout, b.data(), out.data() + r * dout,
                         static_cast<size_t>(dout));
    }
    check_finite(out, "dense");
    const bool needs = rq(input) || rq(weight) || (bias.valid() && rq(bias));
    Var o = input.tape->push(std::move(out), needs);
    if (node_of(o).requires_grad) {
        node_of(o).backward = [input, weight, bias, o, rows, din, dout] {
            const Tensor& g = upstream(o);
            if (rq(input))
                active().matmul_nt(g.data(), weight.value().data(), grad_acc(input).data(),
                                   static_cast<size_t>(rows), static_cast<size_t>(dout),
                                   static_cast<size_t>(din), true);
            if (rq(weight))
                active().matmul_tn(input.value().data(), g.data(), grad_acc(weight).data(),
                                   static_cast<size_t>(din), static_cast<size_t>(rows),
                                   static_cast<size_t>(dout), true);
            if (bias.valid() && rq(bias)) {
                Tensor& gb = grad_acc(bias);
                for (index_t r = 0; r < rows; ++r)
                    active().axpy(1.0, g.data() + r * dout, gb.data(), static_cast<size_t>(dout));
            }
        };
    }
    return o;
}

namespace {

struct ConvDims {
    index_t T, F, Cin, k1, k2, Cout, p1, p2, rows, cols;
};

ConvDims conv_dims(const char* op, const Var& input, const Var& kernels, const Var& bias) {
    const auto& xs = input.shape();
    const auto& ks = kernels.shape();
    if (xs.size() != 3) shape_fail(op, "input must be [T,F,Cin], got " + shape_str(xs));
    if (ks.size() != 4) shape_fail(op, "kernels must be [k1,k2,Cin,Cout], got " + shape_str(ks));
    if (ks[2] != xs[2])
        shape_fail(op, "kernel Cin " + std::to_string(ks[2]) + " != input Cin " +
                           std::to_string(xs[2]));
    if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != ks[3]))
        shape_fail(op, "bias must be [Cout]");
    ConvDims d;
    d.T = xs[0];
    d.F = xs[1];
    d.Cin = xs[2];
    d.k1 = ks[0];
    d.k2 = ks[1];
    d.Cout = ks[3];
    d.p1 = (d.k1 - 1) / 2;  // leading pad; trailing pad is k-1-p (the ceil half)
    d.p2 = (d.k2 - 1) / 2;
    d.rows = d.T * d.F;
    d.cols = d.k1 * d.k2 * d.Cin;
    return d;
}

// im2col for one tile of output rows [r0, r1).
void fill_col_tile(const Tensor& x, const ConvDims& d, index_t r0, index_t r1, double* col) {
    const double* xd = x.data();
    for (index_t r = r0; r < r1; ++r) {
        double* row = col + (r - r0) * d.cols;
        const index_t t = r / d.F, f = r % d.F;
        for (index_t dt = 0; dt < d.k1; ++dt) {
            const index_t ti = t + dt - d.p1;
            double* seg = row + dt * d.k2 * d.Cin;
            if (ti < 0 || ti >= d.T) {
                std::memset(seg, 0, static_cast<size_t>(d.k2 * d.Cin) * sizeof(double));
                continue;
            }
            for (index_t df = 0; df < d.k2; ++df) {
                const index_t fi = f + df - d.p2;
                double* cell = seg + df * d.Cin;
                if (fi < 0 || fi >= d.F) {
                    std::memset(cell, 0, static_cast<size_t>(d.Cin) * sizeof(double));
                } else {
                    std::memcpy(cell, xd + (ti * d.F + fi) * d.Cin,
                                static_cast<size_t>(d.Cin) * sizeof(double));
                }
            }
        }
    }
}

index_t conv_tile_rows(const ConvDims& d) {
    const index_t budget = (4 << 20) / static_cast<index_t>(sizeof(double));  // 4 MiB tiles
    const index_t lo = std::min<index_t>(64, d.rows);
    return std::clamp<index_t>(budget / std::max<index_t>(1, d.cols), lo, d.rows);
}

}  // namespace

Var conv2d(Var input, Var kernels, Var bias) {
    check_same_tape("conv2d", input, kernels);
    const ConvDims d = conv_dims("conv2d", input, kernels, bias);

    Tensor out({d.T, d.F, d.Cout});
    const index_t tile = conv_tile_rows(d);
    std::vector<double> col(static_cast<size_t>(tile * d.cols));
    for (index_t r0 = 0; r0 < d.rows; r0 += tile) {
        const index_t r1 = std::min(d.rows, r0 + tile);
        fill_col_tile(input.value(), d, r0, r1, col.data());
        active().matmul_nn(col.data(), kernels.value().data(), out.data() + r0 * d.Cout,
                           static_cast<size_t>(r1 - r0), static_cast<size_t>(d.cols),
                           static_cast<size_t>(d.Cout), false);
    }
    if (bias.valid()) {
        const Tensor& b = bias.value();
        for (index_t r = 0; r < d.rows; ++r)
            active().add(out.data() + r * d.Cout, b.data(), out.data() + r * d.Cout,
                         static_cast<size_t>(d.Cout));
    }
    check_finite(out, "conv2d");
    const bool needs = rq(input) || rq(kernels) || (bias.valid() && rq(bias));
    Var o = input.tape->push(std::move(out), needs);
    if (node_of(o).requires_grad) {
        node_of(o).backward = [input, kernels, bias, o, d] {
            const Tensor& g = upstream(o);
            const index_t tile = conv_tile_rows(d);
            std::vector<double> col;
            std::vector<double> dcol;
            Tensor* gx = rq(input) ? &grad_acc(input) : nullptr;
            Tensor* gk = rq(kernels) ? &grad_acc(kernels) : nullptr;
            if (gk) col.resize(static_cast<size_t>(tile * d.cols));
            if (gx) dcol.resize(static_cast<size_t>(tile * d.cols));
            for (index_t r0 = 0; r0 < d.rows; r0 += tile) {
                const index_t r1 = std::min(d.rows, r0 + tile);
                if (gk) {
                    fill_col_tile(input.value(), d, r0, r1, col.data());
                    active().matmul_tn(col.data(), g.data() + r0 * d.Cout, gk->data(),
                                       static_cast<size_t>(d.cols), static_cast<size_t>(r1 - r0),
                                       static_cast<size_t>(d.Cout), true);
                }
                if (gx) {
                    active().matmul_nt(g.data() + r0 * d.Cout, kernels.value().data(), dcol.data(),
                                       static_cast<size_t>(r1 - r0), static_cast<size_t>(d.Cout),
                                       static_cast<size_t>(d.cols), false);
                    // col2im scatter-add
                    double* gxd = gx->data();
                    for (index_t r = r0; r < r1; ++r) {
                        const double* row = dcol.data() + (r - r0) * d.cols;
                        const index_t t = r / d.F, f = r % d.F;
                        for (index_t dt = 0; dt < d.k1; ++dt) {
                            const index_t ti = t + dt - d.p1;
                            if (ti < 0 || ti >= d.T) continue;
                            for (index_t df = 0; df < d.k2; ++df) {
                                const index_t fi = f + df - d.p2;
                                if (fi < 0 || fi >= d.F) continue;
                                const double* cell = row + (dt * d.k2 + df) * d.Cin;
                                double* dst = gxd + (ti * d.F + fi) * d.Cin;
                                for (index_t c = 0; c < d.Cin; ++c) dst[c] += cell[c];
                            }
                        }
                    }
                }
            }
            if (bias.valid() && rq(bias)) {
                Tensor& gb = grad_acc(bias);
                for (index_t r = 0; r < d.rows; ++r)
                    active().axpy(1.0, g.data() + r * d.Cout, gb.data(),
                                  static_cast<size_t>(d.Cout));
            }
        };
    }
    return o;
}

Var max_pool_freq(Var input, index_t p) {
    const auto& xs = input.shape();
    if (xs.size() != 3) shape_fail("max_pool_freq", "input must be [T,F,Q]");
    if (p < 1) shape_fail("max_pool_freq", "pool size must be >= 1");
    const index_t T = xs[0], F = xs[1], Q = xs[2];
    if (p > F)
        shape_fail("max_pool_freq",
                   "pool " + std::to_string(p) + " exceeds frequency extent " + std::to_string(F));
    const index_t Fo = F / p;

    const Tensor& x = input.value();
    Tensor out({T, Fo, Q});
    // argmax flat indices into the input, first occurrence on ties
    std::vector<index_t> arg(static_cast<size_t>(out.size()));
    for (index_t t = 0; t < T; ++t) {
        for (index_t fo = 0; fo < Fo; ++fo) {
            for (index_t q = 0; q < Q; ++q) {
                index_t best = (t * F + fo * p) * Q + q;
                double bv = x[best];
                for (index_t d = 1; d < p; ++d) {
                    const index_t idx = (t * F + fo * p + d) * Q + q;
                    if (x[idx] > bv) {
                        bv = x[idx];
                        best = idx;
                    }
                }
                const index_t oi = (t * Fo + fo) * Q + q;
                out[oi] = bv;
                arg[static_cast<size_t>(oi)] = best;
            }
        }
    }
    check_finite(out, "max_pool_freq");
    Var o = input.tape->push(std::move(out), rq(input));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [input, o, arg = std::move(arg)] {
            const Tensor& g = upstream(o);
            Tensor& gx = grad_acc(input);
            for (index_t i = 0; i < g.size(); ++i) gx[arg[static_cast<size_t>(i)]] += g[i];
        };
    }
    return o;
}

// ---------------------------------------------------------------- batchnorm

Var batchnorm(Var input, Var gamma, Var beta, BatchNormBuffers& buffers, bool train,
              double momentum, double eps) {
    const auto& xs = input.shape();
    if (xs.size() != 3) shape_fail("batchnorm", "input must be [T,F,C]");
    const index_t C = xs[2];
    const index_t m = xs[0] * xs[1];
    if (gamma.shape() != std::vector<index_t>{C} || beta.shape() != std::vector<index_t>{C})
        shape_fail("batchnorm", "gamma/beta must be [C]");
    if (!buffers.initialized) {
        buffers.running_mean = Tensor::zeros({C});
        buffers.running_var = Tensor::full({C}, 1.0);
        buffers.initialized = true;
    }

    const Tensor& x = input.value();
    Tensor mean_t({C}), var_t({C});
    if (train) {
        for (index_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (index_t r = 0; r < m; ++r) s += x[r * C + c];
            const double mu = s / static_cast<double>(m);
            double v = 0.0;
            for (index_t r = 0; r < m; ++r) {
                const double dv = x[r * C + c] - mu;
                v += dv * dv;
            }
            mean_t[c] = mu;
            var_t[c] = v / static_cast<double>(m);
        }
        for (index_t c = 0; c < C; ++c) {
            buffers.running_mean[c] = momentum * buffers.running_mean[c] + (1.0 - momentum) * mean_t[c];
            buffers.running_var[c] = momentum * buffers.running_var[c] + (1.0 - momentum) * var_t[c];
        }
    } else {
        mean_t = buffers.running_mean;
        var_t = buffers.running_var;
    }

    Tensor inv_std({C});
    for (index_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var_t[c] + eps);

    Tensor out(xs);
    const Tensor& gm = gamma.value();
    const Tensor& bt = beta.value();
    for (index_t r = 0; r < m; ++r)
        for (index_t c = 0; c < C; ++c)
            out[r * C + c] = gm[c] * ((x[r * C + c] - mean_t[c]) * inv_std[c]) + bt[c];
    check_finite(out, "batchnorm");

    const bool needs = rq(input) || rq(gamma) || rq(beta);
    Var o = input.tape->push(std::move(out), needs);
    if (node_of(o).requires_grad) {
        node_of(o).backward = [input, gamma, beta, o, mean_t = std::move(mean_t),
                               inv_std = std::move(inv_std), m, C, train] {
            const Tensor& g = upstream(o);
            const Tensor& x = input.value();
            const Tensor& gm = gamma.value();
            const double md = static_cast<double>(m);
            for (index_t c = 0; c < C; ++c) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (index_t r = 0; r < m; ++r) {
                    const double xh = (x[r * C + c] - mean_t[c]) * inv_std[c];
                    sum_g += g[r * C + c];
                    sum_gx += g[r * C + c] * xh;
                }
                if (rq(gamma)) grad_acc(gamma)[c] += sum_gx;
                if (rq(beta)) grad_acc(beta)[c] += sum_g;
                if (rq(input)) {
                    Tensor& gi = grad_acc(input);
                    const double k = gm[c] * inv_std[c];
                    if (train) {
                        for (index_t r = 0; r < m; ++r) {
                            const double xh = (x[r * C + c] - mean_t[c]) * inv_std[c];
                            gi[r * C + c] +=
                                k * (g[r * C + c] - sum_g / md - xh * (sum_gx / md));
                        }
                    } else {
                        for (index_t r = 0; r < m; ++r) gi[r * C + c] += k * g[r * C + c];
                    }
                }
            }
        };
    }
    return o;
}

// ------------------------------------------------------------------ capsules

Var squash_lastdim(Var s) {
    const auto& xs = s.shape();
    if (xs.empty()) shape_fail("squash", "scalar input");
    const index_t D = xs.back();
    const index_t vecs = s.value().size() / D;
    const Tensor& x = s.value();
    Tensor out(xs);
    // norms cached for the adjoint
    std::vector<double> norms(static_cast<size_t>(vecs));
    for (index_t v = 0; v < vecs; ++v) {
        const double* xv = x.data() + v * D;
        const double n2 = active().sumsq(xv, static_cast<size_t>(D)) + 1e-12;
        const double n = std::sqrt(n2);
        const double c = n / (1.0 + n2);
        norms[static_cast<size_t>(v)] = n;
        active().scale(xv, c, out.data() + v * D, static_cast<size_t>(D));
    }
    check_finite(out, "squash");
    Var o = s.tape->push(std::move(out), rq(s));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [s, o, D, vecs, norms = std::move(norms)] {
            const Tensor& g = upstream(o);
            const Tensor& x = s.value();
            Tensor& gs = grad_acc(s);
            for (index_t v = 0; v < vecs; ++v) {
                const double* xv = x.data() + v * D;
                const double* gv = g.data() + v * D;
                const double n = norms[static_cast<size_t>(v)];
                const double n2 = n * n;
                const double c = n / (1.0 + n2);
                const double dc_dn = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
                const double gdotx = active().dot(gv, xv, static_cast<size_t>(D));
                const double coef = dc_dn / n * gdotx;
                double* dst = gs.data() + v * D;
                for (index_t d = 0; d < D; ++d) dst[d] += c * gv[d] + coef * xv[d];
            }
        };
    }
    return o;
}

Var caps_predict(Var u, Var W) {
    check_same_tape("caps_predict", u, W);
    const auto& us = u.shape();
    const auto& ws = W.shape();
    if (us.size() != 3) shape_fail("caps_predict", "u must be [T,N,M], got " + shape_str(us));
    if (ws.size() != 4) shape_fail("caps_predict", "W must be [N,K,M,G], got " + shape_str(ws));
    if (ws[0] != us[1] || ws[2] != us[2])
        shape_fail("caps_predict",
                   "u " + shape_str(us) + " incompatible with W " + shape_str(ws));
    const index_t T = us[0], N = us[1], M = us[2], K = ws[1], G = ws[3];
    const index_t KG = K * G;

    const Tensor& uv = u.value();
    const Tensor& wv = W.value();
    Tensor out({T, N, K, G});
    std::vector<double> ubuf(static_cast<size_t>(T * M));
    std::vector<double> wbuf(static_cast<size_t>(M * KG));
    std::vector<double> obuf(static_cast<size_t>(T * KG));
    for (index_t i = 0; i < N; ++i) {
        for (index_t t = 0; t < T; ++t)
            std::memcpy(ubuf.data() + t * M, uv.data() + (t * N + i) * M,
                        static_cast<size_t>(M) * sizeof(double));
        // W[i,j,m,g] -> wbuf[m, j*G+g]
        for (index_t j = 0; j < K; ++j)
            for (index_t mm = 0; mm < M; ++mm)
                std::memcpy(wbuf.data() + mm * KG + j * G,
                            wv.data() + ((i * K + j) * M + mm) * G,
                            static_cast<size_t>(G) * sizeof(double));
        active().matmul_nn(ubuf.data(), wbuf.data(), obuf.data(), static_cast<size_t>(T),
                           static_cast<size_t>(M), static_cast<size_t>(KG), false);
        for (index_t t = 0; t < T; ++t)
            std::memcpy(out.data() + (t * N + i) * KG, obuf.data() + t * KG,
                        static_cast<size_t>(KG) * sizeof(double));
    }
    check_finite(out, "caps_predict");
    Var o = u.tape->push(std::move(out), rq(u) || rq(W));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [u, W, o, T, N, M, K, G, KG] {
            const Tensor& g = upstream(o);
            const Tensor& uv = u.value();
            const Tensor& wv = W.value();
            Tensor* gu = rq(u) ? &grad_acc(u) : nullptr;
            Tensor* gw = rq(W) ? &grad_acc(W) : nullptr;
            std::vector<double> gbuf(static_cast<size_t>(T * KG));
            std::vector<double> ubuf(static_cast<size_t>(T * M));
            std::vector<double> wbuf(static_cast<size_t>(M * KG));
            std::vector<double> tmp(static_cast<size_t>(std::max(T * M, M * KG)));
            for (index_t i = 0; i < N; ++i) {
                for (index_t t = 0; t < T; ++t)
                    std::memcpy(gbuf.data() + t * KG, g.data() + (t * N + i) * KG,
                                static_cast<size_t>(KG) * sizeof(double));
                if (gu) {
                    for (index_t j = 0; j < K; ++j)
                        for (index_t mm = 0; mm < M; ++mm)
                            std::memcpy(wbuf.data() + mm * KG + j * G,
                                        wv.data() + ((i * K + j) * M + mm) * G,
                                        static_cast<size_t>(G) * sizeof(double));
                    // du_i[T,M] = gbuf[T,KG] * wbuf[M,KG]^T
                    active().matmul_nt(gbuf.data(), wbuf.data(), tmp.data(),
                                       static_cast<size_t>(T), static_cast<size_t>(KG),
                                       static_cast<size_t>(M), false);
                    for (index_t t = 0; t < T; ++t) {
                        double* dst = gu->data() + (t * N + i) * M;
                        const double* src = tmp.data() + t * M;
                        for (index_t mm = 0; mm < M; ++mm) dst[mm] += src[mm];
                    }
                }
                if (gw) {
                    for (index_t t = 0; t < T; ++t)
                        std::memcpy(ubuf.data() + t * M, uv.data() + (t * N + i) * M,
                                    static_cast<size_t>(M) * sizeof(double));
                    // dwbuf[M,KG] = ubuf[T,M]^T * gbuf[T,KG]
                    active().matmul_tn(ubuf.data(), gbuf.data(), tmp.data(),
                                       static_cast<size_t>(M), static_cast<size_t>(T),
                                       static_cast<size_t>(KG), false);
                    for (index_t j = 0; j < K; ++j)
                        for (index_t mm = 0; mm < M; ++mm) {
                            double* dst = gw->data() + ((i * K + j) * M + mm) * G;
                            const double* src = tmp.data() + mm * KG + j * G;
                            for (index_t gg = 0; gg < G; ++gg) dst[gg] += src[gg];
                        }
                }
            }
        };
    }
    return o;
}

Var caps_weighted_sum(Var u_hat, Var alpha) {
    check_same_tape("caps_weighted_sum", u_hat, alpha);
    const auto& hs = u_hat.shape();
    const auto& as = alpha.shape();
    if (hs.size() != 4) shape_fail("caps_weighted_sum", "u_hat must be [T,N,K,G]");
    if (as != std::vector<index_t>{hs[0], hs[1], hs[2]})
        shape_fail("caps_weighted_sum", "alpha must be [T,N,K] matching u_hat");
    const index_t T = hs[0], N = hs[1], K = hs[2], G = hs[3];

    const Tensor& h = u_hat.value();
    const Tensor& a = alpha.value();
    Tensor out = Tensor::zeros({T, K, G});
    for (index_t t = 0; t < T; ++t)
        for (index_t i = 0; i < N; ++i)
            for (index_t k = 0; k < K; ++k)
                active().axpy(a[(t * N + i) * K + k], h.data() + ((t * N + i) * K + k) * G,
                              out.data() + (t * K + k) * G, static_cast<size_t>(G));
    check_finite(out, "caps_weighted_sum");
    Var o = u_hat.tape->push(std::move(out), rq(u_hat) || rq(alpha));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [u_hat, alpha, o, T, N, K, G] {
            const Tensor& g = upstream(o);
            const Tensor& h = u_hat.value();
            const Tensor& a = alpha.value();
            Tensor* gh = rq(u_hat) ? &grad_acc(u_hat) : nullptr;
            Tensor* ga = rq(alpha) ? &grad_acc(alpha) : nullptr;
            for (index_t t = 0; t < T; ++t)
                for (index_t i = 0; i < N; ++i)
                    for (index_t k = 0; k < K; ++k) {
                        const index_t hid = ((t * N + i) * K + k) * G;
                        const index_t gid = (t * K + k) * G;
                        if (gh)
                            active().axpy(a[(t * N + i) * K + k], g.data() + gid,
                                          gh->data() + hid, static_cast<size_t>(G));
                        if (ga)
                            (*ga)[(t * N + i) * K + k] +=
                                active().dot(h.data() + hid, g.data() + gid,
                                             static_cast<size_t>(G));
                    }
        };
    }
    return o;
}

Var caps_agreement(Var u_hat, Var v) {
    check_same_tape("caps_agreement", u_hat, v);
    const auto& hs = u_hat.shape();
    const auto& vs = v.shape();
    if (hs.size() != 4) shape_fail("caps_agreement", "u_hat must be [T,N,K,G]");
    if (vs != std::vector<index_t>{hs[0], hs[2], hs[3]})
        shape_fail("caps_agreement", "v must be [T,K,G] matching u_hat");
    const index_t T = hs[0], N = hs[1], K = hs[2], G = hs[3];

    const Tensor& h = u_hat.value();
    const Tensor& vv = v.value();
    Tensor out({T, N, K});
    for (index_t t = 0; t < T; ++t)
        for (index_t i = 0; i < N; ++i)
            for (index_t k = 0; k < K; ++k)
                out[(t * N + i) * K + k] =
                    active().dot(h.data() + ((t * N + i) * K + k) * G,
                                 vv.data() + (t * K + k) * G, static_cast<size_t>(G));
    check_finite(out, "caps_agreement");
    Var o = u_hat.tape->push(std::move(out), rq(u_hat) || rq(v));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [u_hat, v, o, T, N, K, G] {
            const Tensor& g = upstream(o);
            const Tensor& h = u_hat.value();
            const Tensor& vv = v.value();
            Tensor* gh = rq(u_hat) ? &grad_acc(u_hat) : nullptr;
            Tensor* gv = rq(v) ? &grad_acc(v) : nullptr;
            for (index_t t = 0; t < T; ++t)
                for (index_t i = 0; i < N; ++i)
                    for (index_t k = 0; k < K; ++k) {
                        const double gs = g[(t * N + i) * K + k];
                        if (gs == 0.0) continue;
                        const index_t hid = ((t * N + i) * K + k) * G;
                        const index_t vid = (t * K + k) * G;
                        if (gh)
                            active().axpy(gs, vv.data() + vid, gh->data() + hid,
                                          static_cast<size_t>(G));
                        if (gv)
                            active().axpy(gs, h.data() + hid, gv->data() + vid,
                                          static_cast<size_t>(G));
                    }
        };
    }
    return o;
}

Var capsule_norms(Var v) {
    const auto& vs = v.shape();
    if (vs.size() < 2) shape_fail("capsule_norms", "input must have a vector axis");
    const index_t G = vs.back();
    const index_t vecs = v.value().size() / G;
    std::vector<index_t> out_shape(vs.begin(), vs.end() - 1);

    const Tensor& x = v.value();
    Tensor out(out_shape);
    for (index_t i = 0; i < vecs; ++i)
        out[i] = std::sqrt(active().sumsq(x.data() + i * G, static_cast<size_t>(G)));
    check_finite(out, "capsule_norms");
    Var o = v.tape->push(std::move(out), rq(v));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [v, o, G, vecs] {
            const Tensor& g = upstream(o);
            const Tensor& x = v.value();
            const Tensor& n = o.value();
            Tensor& gv = grad_acc(v);
            for (index_t i = 0; i < vecs; ++i) {
                if (n[i] == 0.0) continue;  // gradient defined as zero at the origin
                active().axpy(g[i] / n[i], x.data() + i * G, gv.data() + i * G,
                              static_cast<size_t>(G));
            }
        };
    }
    return o;
}

Var margin_loss_from_norms(Var norms, const Tensor& targets, index_t n_valid, double m_plus,
                           double m_minus, double lambda) {
    const auto& ns = norms.shape();
    if (ns.size() != 2) shape_fail("margin_loss", "norms must be [T,K]");
    if (!targets.same_shape(norms.value()))
        shape_fail("margin_loss", "targets shape " + shape_str(targets.shape()) +
                                      " != norms shape " + shape_str(ns));
    const index_t T = ns[0], K = ns[1];
    if (n_valid < 1 || n_valid > T) shape_fail("margin_loss", "n_valid out of range");
    for (index_t i = 0; i < targets.size(); ++i)
        if (targets[i] != 0.0 && targets[i] != 1.0)
            shape_fail("margin_loss", "targets must be binary");

    const Tensor& n = norms.value();
    double loss = 0.0;
    for (index_t t = 0; t < n_valid; ++t)
        for (index_t k = 0; k < K; ++k) {
            const double nv = n[t * K + k];
            if (targets[t * K + k] == 1.0) {
                const double d = std::max(0.0, m_plus - nv);
                loss += d * d;
            } else {
                const double d = std::max(0.0, nv - m_minus);
                loss += lambda * d * d;
            }
        }
    loss /= static_cast<double>(n_valid);
    Tensor out = Tensor::scalar(loss);
    check_finite(out, "margin_loss");
    Var o = norms.tape->push(std::move(out), rq(norms));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [norms, o, targets, n_valid, K, m_plus, m_minus, lambda] {
            const double g0 = upstream(o)[0] / static_cast<double>(n_valid);
            const Tensor& n = norms.value();
            Tensor& gn = grad_acc(norms);
            for (index_t t = 0; t < n_valid; ++t)
                for (index_t k = 0; k < K; ++k) {
                    const index_t i = t * K + k;
                    if (targets[i] == 1.0) {
                        const double d = m_plus - n[i];
                        if (d > 0.0) gn[i] += g0 * (-2.0 * d);
                    } else {
                        const double d = n[i] - m_minus;
                        if (d > 0.0) gn[i] += g0 * lambda * 2.0 * d;
                    }
                }
        };
    }
    return o;
}

Var bce_with_logits(Var logits, const Tensor& targets, index_t n_valid) {
    const auto& zs = logits.shape();
    if (zs.size() != 2) shape_fail("bce_with_logits", "logits must be [T,K]");
    if (!targets.same_shape(logits.value())) shape_fail("bce_with_logits", "targets shape mismatch");
    const index_t T = zs[0], K = zs[1];
    if (n_valid < 1 || n_valid > T) shape_fail("bce_with_logits", "n_valid out of range");

    const Tensor& z = logits.value();
    double loss = 0.0;
    for (index_t t = 0; t < n_valid; ++t)
        for (index_t k = 0; k < K; ++k) {
            const index_t i = t * K + k;
            loss += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
        }
    loss /= static_cast<double>(n_valid);
    Tensor out = Tensor::scalar(loss);
    check_finite(out, "bce_with_logits");
    Var o = logits.tape->push(std::move(out), rq(logits));
    if (node_of(o).requires_grad) {
        node_of(o).backward = [logits, o, targets, n_valid, K] {
            const double g0 = upstream(o)[0] / static_cast<double>(n_valid);
            const Tensor& z = logits.value();
            Tensor& gz = grad_acc(logits);
            for (index_t t = 0; t < n_valid; ++t)
                for (index_t k = 0; k < K; ++k) {
                    const index_t i = t * K + k;
                    const double zi = z[i];
                    const double sig = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi))
                                                 : std::exp(zi) / (1.0 + std::exp(zi));
                    gz[i] += g0 * (sig - targets[i]);
                }
        };
    }
    return o;
}

}  // namespace capsed::ops
