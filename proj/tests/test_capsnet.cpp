#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "capsed/model/capsnet.hpp"
#include "capsed/model/checkpoint.hpp"
#include "capsed/model/config.hpp"
#include "capsed/model/routing.hpp"
#include "capsed/ops.hpp"
#include "testutil.hpp"

using namespace capsed;
using testutil::random_tensor;

namespace {

// Independent direct transcription of the routing-by-agreement loop:
//   beta <- 0 (or carried); repeat r times:
//     alpha_ij = exp(beta_ij)/sum_k exp(beta_ik)
//     s_j = sum_i alpha_ij u_hat_j|i ; v_j = squash(s_j)
//     beta_ij += u_hat_j|i . v_j
// Plain loops, no tape. Records per-iteration alpha/beta for invariants.
struct RoutingTrace {
    std::vector<Tensor> alphas;  // [N,K] per iteration
    std::vector<Tensor> betas;   // [N,K] after each iteration
    Tensor v;                    // [K,G] final
};

RoutingTrace routing_transcription(const Tensor& u_hat, int r, Tensor beta) {
    const index_t N = u_hat.dim(0), K = u_hat.dim(1), G = u_hat.dim(2);
    RoutingTrace trace;
    Tensor v({K, G});
    for (int it = 0; it < r; ++it) {
        Tensor alpha({N, K});
        for (index_t i = 0; i < N; ++i) {
            double mx = beta.at(i, 0);
            for (index_t k = 1; k < K; ++k) mx = std::max(mx, beta.at(i, k));
            double denom = 0.0;
            for (index_t k = 0; k < K; ++k) {
                alpha.at(i, k) = std::exp(beta.at(i, k) - mx);
                denom += alpha.at(i, k);
            }
            for (index_t k = 0; k < K; ++k) alpha.at(i, k) /= denom;
        }
        Tensor s = Tensor::zeros({K, G});
        for (index_t i = 0; i < N; ++i)
            for (index_t k = 0; k < K; ++k)
                for (index_t g = 0; g < G; ++g)
                    s.at(k, g) += alpha.at(i, k) * u_hat.at(i, k, g);
        for (index_t k = 0; k < K; ++k) {
            double n2 = 1e-12;
            for (index_t g = 0; g < G; ++g) n2 += s.at(k, g) * s.at(k, g);
            const double n = std::sqrt(n2);
            const double c = n / (1.0 + n2);
            for (index_t g = 0; g < G; ++g) v.at(k, g) = c * s.at(k, g);
        }
        for (index_t i = 0; i < N; ++i)
            for (index_t k = 0; k < K; ++k) {
                double dot = 0.0;
                for (index_t g = 0; g < G; ++g) dot += u_hat.at(i, k, g) * v.at(k, g);
                beta.at(i, k) += dot;
            }
        trace.alphas.push_back(alpha);
        trace.betas.push_back(beta);
    }
    trace.v = v;
    return trace;
}

ModelConfig tiny_config(index_t t = 8, index_t f = 16, index_t k_total = 3,
                        bool batchnorm = false, const std::string& head = "capsule") {
    ModelConfig c;
    c.input = {t, f, 1};
    CnnBlockConfig b;
    b.n_kernels = 4;
    b.kernel_h = b.kernel_w = 3;
    b.pool_p = 2;
    b.activation = "relu";
    b.dropout = 0.0;
    b.batchnorm = batchnorm;
    c.blocks.push_back(b);
    c.primary = {2, 3, 3, 2, 0.0};
    c.detection = {k_total, 4};
    c.routing = {2, "reset", false};
    c.head = head;
    if (head == "cnn") c.mlp_dims = {6};
    return c;
}

}  // namespace

TEST_CASE("squash: forced values and direction preservation") {
    Tape tape;
    // s = 0 -> v = 0 (the 1e-12 guard)
    Var z = tape.input(Tensor({1, 3}, {0.0, 0.0, 0.0}));
    const Tensor vz = ops::squash_lastdim(z).value();
    for (index_t i = 0; i < 3; ++i) CHECK(vz[i] == 0.0);

    // |s| = 1 -> |v| = 0.5
    Var u = tape.input(Tensor({1, 2}, {std::sqrt(0.5), std::sqrt(0.5)}));
    const Tensor vu = ops::squash_lastdim(u).value();
    CHECK(std::hypot(vu[0], vu[1]) == doctest::Approx(0.5).epsilon(1e-9));

    // |s| = 100 -> |v| = 10000/10001
    Var big = tape.input(Tensor({1, 1}, {100.0}));
    CHECK(ops::squash_lastdim(big).value()[0] ==
          doctest::Approx(10000.0 / 10001.0).epsilon(1e-12));

    // direction preserved: cosine 1 for |s| > 1e-6
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor s = random_tensor({1, 5}, rng, -2.0, 2.0);
        double norm = 0.0;
        for (index_t i = 0; i < 5; ++i) norm += s[i] * s[i];
        if (std::sqrt(norm) <= 1e-6) continue;
        Tape t2;
        const Tensor v = ops::squash_lastdim(t2.input(s)).value();
        double dot = 0.0, nv = 0.0;
        for (index_t i = 0; i < 5; ++i) {
            dot += s[i] * v[i];
            nv += v[i] * v[i];
        }
        const double cosine = dot / (std::sqrt(norm) * std::sqrt(nv));
        CHECK(cosine == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(std::sqrt(nv) < 1.0);
    }
}

TEST_CASE("route: matches the direct transcription to 1e-12 on random instances") {
    Rng rng(100);
    for (int trial = 0; trial < 60; ++trial) {
        const index_t N = 1 + rng.randint(0, 19);
        const index_t K = 2 + rng.randint(0, 4);
        const index_t G = 2 + rng.randint(0, 6);
        const int r = 1 + static_cast<int>(rng.randint(0, 4));
        const Tensor u_hat = random_tensor({N, K, G}, rng, -1.5, 1.5);

        Tape tape;
        RoutingState state = RoutingState::zeros(N, K);
        Var v = route(tape.input(u_hat), r, state);
        const RoutingTrace want = routing_transcription(u_hat, r, Tensor::zeros({N, K}));
        CHECK(testutil::max_abs_diff(v.value(), want.v) < 1e-12);
        CHECK(testutil::max_abs_diff(state.beta, want.betas.back()) < 1e-12);

        // alpha rows sum to 1 at every iteration of the transcription
        for (const Tensor& alpha : want.alphas)
            for (index_t i = 0; i < N; ++i) {
                double sum = 0.0;
                for (index_t k = 0; k < K; ++k) sum += alpha.at(i, k);
                CHECK(std::abs(sum - 1.0) <= 1e-12);
            }
    }
}

TEST_CASE("route: r=1 with zero beta couples uniformly at 1/K") {
    Rng rng(7);
    const index_t N = 3, K = 4, G = 2;
    const Tensor u_hat = random_tensor({N, K, G}, rng);
    Tape tape;
    RoutingState state = RoutingState::zeros(N, K);
    Var v = route(tape.input(u_hat), 1, state);
    // s_j = (1/K) sum_i u_hat_j|i, then squash
    for (index_t k = 0; k < K; ++k) {
        Tensor s({1, G});
        for (index_t g = 0; g < G; ++g) {
            double acc = 0.0;
            for (index_t i = 0; i < N; ++i) acc += u_hat.at(i, k, g);
            s.at(0, g) = acc / static_cast<double>(K);
        }
        Tape t2;
        const Tensor sq = ops::squash_lastdim(t2.input(s)).value();
        for (index_t g = 0; g < G; ++g)
            CHECK(v.value().at(k, g) == doctest::Approx(sq[g]).epsilon(1e-12));
    }

    // single input capsule: same uniform-coupling rule (softmax over outputs)
    const Tensor one = random_tensor({1, K, G}, rng);
    Tape t3;
    RoutingState st1 = RoutingState::zeros(1, K);
    Var v1 = route(t3.input(one), 1, st1);
    for (index_t k = 0; k < K; ++k) {
        Tensor s({1, G});
        for (index_t g = 0; g < G; ++g) s.at(0, g) = one.at(0, k, g) / static_cast<double>(K);
        Tape t4;
        const Tensor sq = ops::squash_lastdim(t4.input(s)).value();
        for (index_t g = 0; g < G; ++g)
            CHECK(v1.value().at(k, g) == doctest::Approx(sq[g]).epsilon(1e-12));
    }
}

TEST_CASE("route: agreement strengthens coupling across iterations") {
    // two input capsules agreeing on output 0, conflicting on output 1
    Tensor u_hat = Tensor::zeros({2, 2, 2});
    u_hat.at(0, 0, 0) = 1.0;
    u_hat.at(1, 0, 0) = 1.0;
    u_hat.at(0, 1, 1) = 1.0;
    u_hat.at(1, 1, 1) = -1.0;

    const RoutingTrace t1 = routing_transcription(u_hat, 1, Tensor::zeros({2, 2}));
    const RoutingTrace t3 = routing_transcription(u_hat, 3, Tensor::zeros({2, 2}));
    // coupling toward the agreeing output strictly grows vs r=1
    CHECK(t3.alphas.back().at(0, 0) > t1.alphas.back().at(0, 0));
    CHECK(t3.alphas.back().at(1, 0) > t1.alphas.back().at(1, 0));
    // beta for the agreeing pair is non-decreasing across iterations
    double prev = 0.0;
    for (const Tensor& beta : t3.betas) {
        CHECK(beta.at(0, 0) >= prev);
        prev = beta.at(0, 0);
    }
    // and the tape implementation agrees with the trace
    Tape tape;
    RoutingState st = RoutingState::zeros(2, 2);
    Var v = route(tape.input(u_hat), 3, st);
    CHECK(testutil::max_abs_diff(v.value(), t3.v) < 1e-12);
}

TEST_CASE("margin loss: corner values are exact") {
    auto corner = [](double target, double norm) {
        Tape tape;
        Var n = tape.input(Tensor({1, 1}, {norm}));
        return ops::margin_loss_from_norms(n, Tensor({1, 1}, {target}), 1).value()[0];
    };
    CHECK(corner(1.0, 0.9) == 0.0);
    CHECK(corner(0.0, 0.1) == 0.0);
    CHECK(corner(1.0, 0.0) == 0.81);    // exact: 0.9^2
    CHECK(corner(0.0, 1.0) == 0.405);   // exact: 0.5 * 0.9^2

    // via capsule_norms of an exactly-zero vector (plain sqrt, no guard)
    Tape tape;
    Var v = tape.input(Tensor::zeros({1, 1, 4}));
    Var n = ops::capsule_norms(v);
    CHECK(ops::margin_loss_from_norms(n, Tensor({1, 1}, {1.0}), 1).value()[0] == 0.81);
}

TEST_CASE("margin loss: zero iff margins met, summed over classes, averaged over frames") {
    Rng rng(15);
    // loss is zero iff every active class norm >= 0.9 and inactive <= 0.1
    Tensor norms({2, 3}, {0.95, 0.05, 0.91, 0.9, 0.1, 0.0});
    Tensor targets({2, 3}, {1.0, 0.0, 1.0, 1.0, 0.0, 0.0});
    Tape tape;
    CHECK(ops::margin_loss_from_norms(tape.input(norms), targets, 2).value()[0] == 0.0);

    // violating either margin makes it positive
    norms.at(0, 0) = 0.89;
    Tape t2;
    CHECK(ops::margin_loss_from_norms(t2.input(norms), targets, 2).value()[0] > 0.0);

    // frame averaging: duplicating the frames leaves the loss unchanged
    const Tensor n1 = random_tensor({1, 4}, rng, 0.0, 1.0);
    Tensor t1 = Tensor::zeros({1, 4});
    t1.at(0, 1) = 1.0;
    Tensor n2({2, 4});
    Tensor t2x({2, 4});
    for (index_t k = 0; k < 4; ++k) {
        n2.at(0, k) = n2.at(1, k) = n1.at(0, k);
        t2x.at(0, k) = t2x.at(1, k) = t1.at(0, k);
    }
    Tape t3, t4;
    const double a = ops::margin_loss_from_norms(t3.input(n1), t1, 1).value()[0];
    const double b = ops::margin_loss_from_norms(t4.input(n2), t2x, 2).value()[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("primary capsules: identity construction equals squashed channel pairs") {
    // 1x1 kernels copying two input channels into one 2-d capsule per cell
    Rng rng(8);
    const Tensor fmap = random_tensor({3, 4, 2}, rng);
    Tensor kernels = Tensor::zeros({1, 1, 2, 2});
    kernels.at(0, 0, 0, 0) = 1.0;  // channel 0 -> capsule dim 0
    kernels.at(0, 0, 1, 1) = 1.0;  // channel 1 -> capsule dim 1
    Tape tape;
    Var conv = ops::conv2d(tape.input(fmap), tape.input(kernels), Var{});
    Var u = ops::squash_lastdim(ops::reshape(conv, {3, 4, 2}));
    for (index_t t = 0; t < 3; ++t)
        for (index_t f = 0; f < 4; ++f) {
            Tensor pair({1, 2}, {fmap.at(t, f, 0), fmap.at(t, f, 1)});
            Tape t2;
            const Tensor sq = ops::squash_lastdim(t2.input(pair)).value();
            CHECK(u.value().at(t, f, 0) == doctest::Approx(sq[0]).epsilon(1e-12));
            CHECK(u.value().at(t, f, 1) == doctest::Approx(sq[1]).epsilon(1e-12));
            // norms bounded below 1 by squashing
            CHECK(std::hypot(u.value().at(t, f, 0), u.value().at(t, f, 1)) < 1.0);
        }

    // reshape layout claim: [T,F',J*M] -> [T, F'*J, M] with channel = j*M+m
    const Tensor wide = random_tensor({256, 3, 112}, rng);  // J=16, M=7
    Tape t3;
    Var r = ops::reshape(t3.input(wide), {256, 48, 7});
    CHECK(r.value().at(0, 0, 6) == wide.at(0, 0, 6));
    CHECK(r.value().at(0, 1, 0) == wide.at(0, 0, 7));   // j=1 starts at channel M
    CHECK(r.value().at(0, 16, 0) == wide.at(0, 1, 0));  // next frequency cell
    CHECK(r.value().shape() == std::vector<index_t>{256, 48, 7});
}

TEST_CASE("model: zero detection weights give zero probabilities") {
    Rng rng(11);
    ModelConfig cfg = tiny_config();
    Model model(cfg, rng);
    for (Parameter* p : model.parameters())
        if (p->name == "detection.W") p->value.fill(0.0);
    Tape tape;
    Rng frng(1);
    const Tensor window = random_tensor({8, 16, 1}, rng);
    const auto fwd = model.forward(tape, window, false, frng);
    for (index_t i = 0; i < fwd.probs.size(); ++i) CHECK(fwd.probs[i] == 0.0);
}

TEST_CASE("model: activity probabilities always in [0,1)") {
    Rng rng(19);
    ModelConfig cfg = tiny_config(8, 16, 4, true);
    Model model(cfg, rng);
    for (int trial = 0; trial < 5; ++trial) {
        Tape tape;
        Rng frng(trial);
        const auto fwd =
            model.forward(tape, random_tensor({8, 16, 1}, rng, -3.0, 3.0), false, frng);
        for (index_t i = 0; i < fwd.probs.size(); ++i) {
            CHECK(fwd.probs[i] >= 0.0);
            CHECK(fwd.probs[i] < 1.0);
        }
    }
}

TEST_CASE("model: persistent beta equals reset on a stream's first window, differs later") {
    Rng rng(23);
    ModelConfig cfg = tiny_config();
    Model model(cfg, rng);
    const Tensor w1 = random_tensor({8, 16, 1}, rng);
    const Tensor w2 = random_tensor({8, 16, 1}, rng);
    Rng frng(0);

    // first window of a fresh stream: both modes start from zero beta
    Tape ta, tb;
    const auto reset1 = model.forward(ta, w1, false, frng);
    const auto persist1 = model.forward(tb, w1, false, frng, nullptr);
    CHECK(testutil::max_abs_diff(reset1.probs, persist1.probs) == 0.0);

    // second window: carried beta changes the outputs
    Tape tc, td;
    const auto reset2 = model.forward(tc, w2, false, frng);
    const auto persist2 = model.forward(td, w2, false, frng, &persist1.beta_out);
    CHECK(testutil::max_abs_diff(reset2.probs, persist2.probs) > 1e-9);
}

TEST_CASE("census: hand count for a minimal capsule model") {
    ModelConfig c;
    c.input = {4, 8, 1};
    CnnBlockConfig b;
    b.n_kernels = 1;
    b.kernel_h = b.kernel_w = 3;
    b.pool_p = 2;
    c.blocks.push_back(b);
    c.primary = {2, 3, 3, 2, 0.0};  // M=2, 3x3, J=2
    c.detection = {2, 2};           // K_total=2, G=2
    c.routing = {1, "reset", false};
    Rng rng(1);
    Model m(c, rng);
    // conv: 3*3*1*1+1 = 10; primary: 3*3*1*(2*2)+4 = 40; F' = 4, N = 8;
    // W: 8*2*2*2 = 64  -> 114
    CHECK(m.param_count() == 10 + 40 + 64);
}

TEST_CASE("census: paper presets within 15 percent") {
    Rng rng(1);
    const Model home(ModelConfig::preset("home"), rng);
    const Model street(ModelConfig::preset("street"), rng);
    CHECK(std::abs(static_cast<double>(home.param_count()) - 267000.0) / 267000.0 < 0.15);
    CHECK(std::abs(static_cast<double>(street.param_count()) - 223000.0) / 223000.0 < 0.15);
}

TEST_CASE("config: pooling that collapses F is an error") {
    ModelConfig c = tiny_config(8, 4, 3);
    c.blocks[0].pool_p = 5;  // F=4 < 5
    CHECK_THROWS_AS(c.validate(), ShapeError);
    CHECK_THROWS_AS(ModelConfig::preset("nonexistent"), DataError);
}

TEST_CASE("config json round trip") {
    ModelConfig c = tiny_config(8, 16, 3, true);
    c.routing.mode = "persistent";
    c.l2_enabled = true;
    const ModelConfig rt = ModelConfig::from_json(c.to_json());
    CHECK(rt.routing.mode == "persistent");
    CHECK(rt.blocks.size() == 1);
    CHECK(rt.blocks[0].batchnorm);
    CHECK(rt.l2_enabled);
    CHECK(rt.detection.k_total == 3);
    CHECK(rt.f_prime() == c.f_prime());
}

TEST_CASE("cnn head: zero weights give 0.5 everywhere; shapes flatten") {
    Rng rng(31);
    ModelConfig cfg = tiny_config(8, 16, 3, false, "cnn");
    Model model(cfg, rng);
    for (Parameter* p : model.parameters()) p->value.fill(0.0);
    Tape tape;
    Rng frng(0);
    const auto fwd = model.forward(tape, random_tensor({8, 16, 1}, rng), false, frng);
    CHECK(fwd.probs.shape() == std::vector<index_t>{8, 2});
    for (index_t i = 0; i < fwd.probs.size(); ++i) CHECK(fwd.probs[i] == 0.5);
}

TEST_CASE("full-model gradient check: capsule head (tiny config, r=2)") {
    Rng rng(41);
    ModelConfig cfg = tiny_config(8, 16, 3, true);
    // tanh keeps the FD path smooth; relu has its own primitive-level check
    cfg.blocks[0].activation = "tanh";
    cfg.blocks[0].dropout = 0.2;
    cfg.primary.dropout = 0.1;
    Model model(cfg, rng);
    const Tensor window = random_tensor({8, 16, 1}, rng);
    Tensor targets = Tensor::zeros({8, 3});
    for (index_t t = 0; t < 8; ++t) targets.at(t, t % 3) = 1.0;

    auto loss_of = [&] {
        Rng frng(7);
        Tape tape;
        auto fwd = model.forward(tape, window, true, frng);
        return ops::margin_loss_from_norms(fwd.head_out, targets, 8).value()[0];
    };
    {
        Rng frng(7);
        Tape tape;
        auto fwd = model.forward(tape, window, true, frng);
        Var loss = ops::margin_loss_from_norms(fwd.head_out, targets, 8);
        for (Parameter* p : model.parameters()) p->zero_grad();
        tape.backward(loss);
    }
    Rng pick(99);
    for (Parameter* p : model.parameters()) {
        const auto idx = testutil::sample_indices(p->value.size(), 6, pick);
        const double worst =
            testutil::finite_diff_check(loss_of, p->value.data(), p->grad.data(), idx);
        INFO("parameter group ", p->name);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("full-model gradient check: cnn head") {
    Rng rng(43);
    ModelConfig cfg = tiny_config(6, 12, 3, false, "cnn");
    Model model(cfg, rng);
    const Tensor window = random_tensor({6, 12, 1}, rng);
    Tensor targets = Tensor::zeros({6, 2});
    for (index_t t = 0; t < 6; ++t) targets.at(t, t % 2) = 1.0;

    auto loss_of = [&] {
        Rng frng(3);
        Tape tape;
        auto fwd = model.forward(tape, window, true, frng);
        return ops::bce_with_logits(fwd.head_out, targets, 6).value()[0];
    };
    {
        Rng frng(3);
        Tape tape;
        auto fwd = model.forward(tape, window, true, frng);
        Var loss = ops::bce_with_logits(fwd.head_out, targets, 6);
        for (Parameter* p : model.parameters()) p->zero_grad();
        tape.backward(loss);
    }
    Rng pick(98);
    for (Parameter* p : model.parameters()) {
        const auto idx = testutil::sample_indices(p->value.size(), 6, pick);
        const double worst =
            testutil::finite_diff_check(loss_of, p->value.data(), p->grad.data(), idx);
        INFO("parameter group ", p->name);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("checkpoint: save/load round trip preserves everything") {
    namespace fsys = std::filesystem;
    Rng rng(51);
    ModelConfig cfg = tiny_config(8, 16, 3, true);
    cfg.routing.mode = "persistent";
    Model model(cfg, rng);

    FeatureConfig feat;
    feat.context_t = 8;
    feat.n_mels = 16;
    NormStats norm;
    norm.mean = random_tensor({16, 1}, rng);
    norm.stddev = Tensor::full({16, 1}, 1.25);

    const std::string path = (fsys::temp_directory_path() / "capsed_test.ckpt").string();
    save_checkpoint(path, model, feat, norm, {"a", "b"});
    LoadedCheckpoint lc = load_checkpoint(path);
    CHECK(lc.meta.labels == std::vector<std::string>{"a", "b"});
    CHECK(lc.meta.model.routing.mode == "persistent");
    CHECK(lc.meta.features.n_mels == 16);
    CHECK(testutil::max_abs_diff(lc.meta.norm.mean, norm.mean) == 0.0);

    const Tensor window = random_tensor({8, 16, 1}, rng);
    Rng fa(0), fb(0);
    Tape ta, tb;
    const auto f1 = model.forward(ta, window, false, fa);
    const auto f2 = lc.model->forward(tb, window, false, fb);
    CHECK(testutil::max_abs_diff(f1.probs, f2.probs) == 0.0);
    fsys::remove(path);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/capsed.ckpt"), DataError);
}

TEST_CASE("batchnorm buffers: running averages move with momentum 0.9") {
    Rng rng(61);
    ModelConfig cfg = tiny_config(8, 16, 3, true);
    Model model(cfg, rng);
    auto bufs = model.bn_buffers();
    REQUIRE(bufs.size() == 1);
    const Tensor before = bufs[0]->running_mean;
    Tape tape;
    Rng frng(0);
    model.forward(tape, random_tensor({8, 16, 1}, rng, 1.0, 2.0), true, frng);
    const Tensor after = bufs[0]->running_mean;
    CHECK(testutil::max_abs_diff(before, after) > 0.0);
    // inference does not move the buffers
    Tape t2;
    model.forward(t2, random_tensor({8, 16, 1}, rng, 1.0, 2.0), false, frng);
    CHECK(testutil::max_abs_diff(after, bufs[0]->running_mean) == 0.0);
}
