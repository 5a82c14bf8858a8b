#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "capsed/ops.hpp"
#include "capsed/tape.hpp"
#include "testutil.hpp"

using namespace capsed;
using testutil::random_tensor;

namespace {

// Brute-force 'same'-padded direct convolution, quadruple loop.
Tensor conv2d_oracle(const Tensor& x, const Tensor& k, const Tensor& b) {
    const index_t T = x.dim(0), F = x.dim(1), Cin = x.dim(2);
    const index_t k1 = k.dim(0), k2 = k.dim(1), Cout = k.dim(3);
    const index_t p1 = (k1 - 1) / 2, p2 = (k2 - 1) / 2;
    Tensor out({T, F, Cout});
    for (index_t t = 0; t < T; ++t)
        for (index_t f = 0; f < F; ++f)
            for (index_t co = 0; co < Cout; ++co) {
                double acc = b[co];
                for (index_t dt = 0; dt < k1; ++dt)
                    for (index_t df = 0; df < k2; ++df)
                        for (index_t ci = 0; ci < Cin; ++ci) {
                            const index_t ti = t + dt - p1, fi = f + df - p2;
                            if (ti < 0 || ti >= T || fi < 0 || fi >= F) continue;
                            acc += x.at(ti, fi, ci) * k.at(dt, df, ci, co);
                        }
                out.at(t, f, co) = acc;
            }
    return out;
}

Tensor maxpool_oracle(const Tensor& x, index_t p) {
    const index_t T = x.dim(0), F = x.dim(1), Q = x.dim(2);
    Tensor out({T, F / p, Q});
    for (index_t t = 0; t < T; ++t)
        for (index_t fo = 0; fo < F / p; ++fo)
            for (index_t q = 0; q < Q; ++q) {
                double m = x.at(t, fo * p, q);
                for (index_t d = 1; d < p; ++d) m = std::max(m, x.at(t, fo * p + d, q));
                out.at(t, fo, q) = m;
            }
    return out;
}

Tensor dense_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
    const index_t din = w.dim(0), dout = w.dim(1);
    const index_t rows = x.size() / din;
    Tensor out({rows, dout});
    for (index_t r = 0; r < rows; ++r)
        for (index_t o = 0; o < dout; ++o) {
            double acc = b[o];
            for (index_t i = 0; i < din; ++i) acc += x[r * din + i] * w.at(i, o);
            out.at(r, o) = acc;
        }
    return out;
}

}  // namespace

TEST_CASE("conv2d: identity and bias-only cases") {
    Tape tape;
    // 1x1 input, 1x1 identity kernel, zero bias -> output equals input
    Var x = tape.input(Tensor({1, 1, 1}, {0.37}));
    Var k = tape.input(Tensor({1, 1, 1, 1}, {1.0}));
    Var b = tape.input(Tensor({1}, {0.0}));
    Var y = ops::conv2d(x, k, b);
    CHECK(y.value()[0] == doctest::Approx(0.37));

    // all-zero kernels, bias -> every output element equals the bias
    Rng rng(3);
    Var x2 = tape.input(random_tensor({4, 5, 2}, rng));
    Var k2 = tape.input(Tensor::zeros({3, 3, 2, 3}));
    Var b2 = tape.input(Tensor({3}, {1.5, -2.0, 0.25}));
    Var y2 = ops::conv2d(x2, k2, b2);
    for (index_t t = 0; t < 4; ++t)
        for (index_t f = 0; f < 5; ++f) {
            CHECK(y2.value().at(t, f, 0) == doctest::Approx(1.5));
            CHECK(y2.value().at(t, f, 1) == doctest::Approx(-2.0));
            CHECK(y2.value().at(t, f, 2) == doctest::Approx(0.25));
        }
}

TEST_CASE("conv2d: matches the quadruple-loop oracle on 100 random instances") {
    for (int s = 0; s < 100; ++s) {
        Rng rng(1000 + s);
        const index_t T = 1 + rng.randint(1, 6), F = 1 + rng.randint(1, 6);
        const index_t Cin = 1 + rng.randint(0, 2), Cout = 1 + rng.randint(0, 3);
        const index_t k1 = 1 + rng.randint(0, 4), k2 = 1 + rng.randint(0, 4);
        Tape tape;
        Var x = tape.input(random_tensor({T, F, Cin}, rng));
        Var k = tape.input(random_tensor({k1, k2, Cin, Cout}, rng));
        Var b = tape.input(random_tensor({Cout}, rng));
        Var y = ops::conv2d(x, k, b);
        const Tensor want = conv2d_oracle(x.value(), k.value(), b.value());
        CHECK(testutil::max_abs_diff(y.value(), want) < 1e-12);
    }
    // the spec's named instance
    Rng rng(77);
    Tape tape;
    Var x = tape.input(random_tensor({6, 5, 2}, rng));
    Var k = tape.input(random_tensor({3, 3, 2, 4}, rng));
    Var b = tape.input(random_tensor({4}, rng));
    CHECK(testutil::max_abs_diff(ops::conv2d(x, k, b).value(),
                                 conv2d_oracle(x.value(), k.value(), b.value())) < 1e-12);
}

TEST_CASE("conv2d: shape errors are descriptive") {
    Tape tape;
    Var x = tape.input(Tensor::zeros({4, 4, 2}));
    Var k = tape.input(Tensor::zeros({3, 3, 3, 2}));  // Cin mismatch
    Var b = tape.input(Tensor::zeros({2}));
    CHECK_THROWS_AS(ops::conv2d(x, k, b), ShapeError);
}

TEST_CASE("max_pool_freq: identity, forced case, oracle") {
    Tape tape;
    Rng rng(5);
    Var x = tape.input(random_tensor({3, 6, 2}, rng));
    Var y = ops::max_pool_freq(x, 1);
    CHECK(testutil::max_abs_diff(y.value(), x.value()) == 0.0);

    Var v = tape.input(Tensor({1, 4, 1}, {1, 3, 2, 5}));
    Var pooled = ops::max_pool_freq(v, 2);
    CHECK(pooled.value()[0] == 3);
    CHECK(pooled.value()[1] == 5);

    Var big = tape.input(random_tensor({4, 8, 3}, rng));
    CHECK(testutil::max_abs_diff(ops::max_pool_freq(big, 2).value(),
                                 maxpool_oracle(big.value(), 2)) == 0.0);

    CHECK_THROWS_AS(ops::max_pool_freq(v, 5), ShapeError);  // p > F
}

TEST_CASE("dense: identity, zero-weight broadcast, oracle") {
    Tape tape;
    Tensor eye = Tensor::zeros({3, 3});
    for (index_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    Rng rng(9);
    Var x = tape.input(random_tensor({4, 3}, rng));
    Var w = tape.input(eye);
    Var b0 = tape.input(Tensor::zeros({3}));
    CHECK(testutil::max_abs_diff(ops::dense(x, w, b0).value(), x.value()) == 0.0);

    Var wz = tape.input(Tensor::zeros({3, 2}));
    Var bb = tape.input(Tensor({2}, {0.7, -0.2}));
    Var y = ops::dense(x, wz, bb);
    for (index_t r = 0; r < 4; ++r) {
        CHECK(y.value().at(r, 0) == doctest::Approx(0.7));
        CHECK(y.value().at(r, 1) == doctest::Approx(-0.2));
    }

    for (int s = 0; s < 30; ++s) {
        Rng r2(50 + s);
        const index_t rows = 1 + r2.randint(0, 5), din = 1 + r2.randint(0, 6),
                      dout = 1 + r2.randint(0, 6);
        Tape t2;
        Var xx = t2.input(random_tensor({rows, din}, r2));
        Var ww = t2.input(random_tensor({din, dout}, r2));
        Var bc = t2.input(random_tensor({dout}, r2));
        CHECK(testutil::max_abs_diff(ops::dense(xx, ww, bc).value(),
                                     dense_oracle(xx.value(), ww.value(), bc.value())) < 1e-12);
    }
    CHECK_THROWS_AS(ops::dense(x, tape.input(Tensor::zeros({4, 2})), b0), ShapeError);
}

TEST_CASE("elementwise suite examples") {
    Tape tape;
    Var x = tape.input(Tensor({2}, {-3.0, 2.0}));
    Var r = ops::relu(x);
    CHECK(r.value()[0] == 0.0);
    CHECK(r.value()[1] == 2.0);

    Rng rng(2);
    Var big = tape.input(random_tensor({5, 7}, rng));
    Var same = ops::dropout(big, 0.0, true, rng);
    CHECK(testutil::max_abs_diff(same.value(), big.value()) == 0.0);
    Var inference = ops::dropout(big, 0.4, false, rng);
    CHECK(testutil::max_abs_diff(inference.value(), big.value()) == 0.0);

    // l2_penalty of a single weight w=2 with lambda=0.01 -> 0.04
    Var w = tape.input(Tensor({1}, {2.0}), true);
    Var pen = ops::l2_penalty({w}, 0.01);
    CHECK(pen.value()[0] == doctest::Approx(0.04));
}

TEST_CASE("dropout: train-time masking scales survivors") {
    Tape tape;
    Rng rng(123);
    Var x = tape.input(Tensor::full({10000}, 1.0));
    const double rate = 0.3;
    Var y = ops::dropout(x, rate, true, rng);
    index_t zeros = 0;
    for (index_t i = 0; i < y.value().size(); ++i) {
        const double v = y.value()[i];
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.7)));
        if (v == 0.0) ++zeros;
    }
    CHECK(zeros > 2500);
    CHECK(zeros < 3500);
}

TEST_CASE("softmax_axis: uniformity, shift invariance, high-precision oracle") {
    Tape tape;
    Var x = tape.input(Tensor::full({1, 5}, 3.7));
    Var y = ops::softmax_axis(x, 1);
    for (index_t i = 0; i < 5; ++i) CHECK(y.value()[i] == doctest::Approx(0.2));

    Var a = tape.input(Tensor({2}, {0.0, 0.0}));
    Var b = tape.input(Tensor({2}, {1000.0, 1000.0}));
    Var sa = ops::softmax_axis(a, 0);
    Var sb = ops::softmax_axis(b, 0);
    CHECK(testutil::max_abs_diff(sa.value(), sb.value()) == 0.0);
    CHECK(sa.value()[0] == doctest::Approx(0.5));

    Rng rng(17);
    for (int s = 0; s < 50; ++s) {
        const index_t n = 1 + rng.randint(0, 9);
        Tensor v = random_tensor({n}, rng, -30.0, 30.0);
        Tape t2;
        Var out = ops::softmax_axis(t2.input(v), 0);
        long double denom = 0.0;
        std::vector<long double> ex(static_cast<size_t>(n));
        for (index_t i = 0; i < n; ++i) {
            ex[static_cast<size_t>(i)] = expl(static_cast<long double>(v[i]));
            denom += ex[static_cast<size_t>(i)];
        }
        for (index_t i = 0; i < n; ++i)
            CHECK(std::abs(out.value()[i] - static_cast<double>(ex[static_cast<size_t>(i)] / denom)) < 1e-14);
        // sums to 1 along the axis
        double sum = 0.0;
        for (index_t i = 0; i < n; ++i) sum += out.value()[i];
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax_axis: middle axis of a 3-d tensor") {
    Rng rng(31);
    Tensor v = random_tensor({3, 4, 2}, rng, -5.0, 5.0);
    Tape tape;
    Var out = ops::softmax_axis(tape.input(v), 1);
    for (index_t o = 0; o < 3; ++o)
        for (index_t i = 0; i < 2; ++i) {
            double sum = 0.0;
            for (index_t l = 0; l < 4; ++l) sum += out.value().at(o, l, i);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("non-finite forward values raise NumericError") {
    Tape tape;
    Var x = tape.input(Tensor({2}, {1e308, 1e308}));
    CHECK_THROWS_AS(ops::add(x, x), NumericError);  // overflows to inf
    Var nan_in = tape.input(Tensor({2}, {std::nan(""), 1.0}));
    CHECK_THROWS_AS(ops::scalar_mul(nan_in, 2.0), NumericError);
}

TEST_CASE("determinism: identical seeds give bit-identical op outputs") {
    auto run = [] {
        Rng rng(555);
        Tape tape;
        Var x = tape.input(random_tensor({8, 9, 2}, rng));
        Var k = tape.input(random_tensor({3, 3, 2, 4}, rng));
        Var b = tape.input(random_tensor({4}, rng));
        Var y = ops::conv2d(x, k, b);
        Var d = ops::dropout(y, 0.25, true, rng);
        return d.value();
    };
    const Tensor a = run();
    const Tensor b = run();
    CHECK(testutil::max_abs_diff(a, b) == 0.0);
}
