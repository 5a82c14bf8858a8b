#include "capsed/model/capsnet.hpp"

#include <cmath>
#include <cstring>

#include "capsed/common.hpp"

namespace capsed {

double glorot_limit(index_t fan_in, index_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor glorot_uniform(const std::vector<index_t>& shape, index_t fan_in, index_t fan_out,
                      Rng& rng) {
    const double lim = glorot_limit(fan_in, fan_out);
    Tensor t(shape);
    for (index_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-lim, lim);
    return t;
}

Model::Model(ModelConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
    cfg_.validate();

    index_t c_in = cfg_.input.channels;
    for (size_t bi = 0; bi < cfg_.blocks.size(); ++bi) {
        const auto& bc = cfg_.blocks[bi];
        Block blk;
        const index_t fan_in = bc.kernel_h * bc.kernel_w * c_in;
        const index_t fan_out = bc.kernel_h * bc.kernel_w * bc.n_kernels;
        blk.kernels = Parameter("block" + std::to_string(bi) + ".kernels",
                                glorot_uniform({bc.kernel_h, bc.kernel_w, c_in, bc.n_kernels},
                                               fan_in, fan_out, init_rng));
        blk.bias = Parameter("block" + std::to_string(bi) + ".bias",
                             Tensor::zeros({bc.n_kernels}));
        if (bc.batchnorm) {
            blk.has_bn = true;
            blk.bn_gamma = Parameter("block" + std::to_string(bi) + ".bn_gamma",
                                     Tensor::full({bc.n_kernels}, 1.0));
            blk.bn_beta = Parameter("block" + std::to_string(bi) + ".bn_beta",
                                    Tensor::zeros({bc.n_kernels}));
            blk.bn.running_mean = Tensor::zeros({bc.n_kernels});
            blk.bn.running_var = Tensor::full({bc.n_kernels}, 1.0);
            blk.bn.initialized = true;
        }
        blocks_.push_back(std::move(blk));
        c_in = bc.n_kernels;
    }
    const index_t q = c_in;

    if (cfg_.head == "capsule") {
        const auto& pc = cfg_.primary;
        const index_t jm = pc.j_kernels * pc.m_caps;
        primary_kernels_ = Parameter(
            "primary.kernels",
            glorot_uniform({pc.kernel_h, pc.kernel_w, q, jm}, pc.kernel_h * pc.kernel_w * q,
                           pc.kernel_h * pc.kernel_w * jm, init_rng));
        primary_bias_ = Parameter("primary.bias", Tensor::zeros({jm}));

        const index_t n_in = cfg_.n_in();
        const index_t k_total = cfg_.detection.k_total;
        const index_t m = pc.m_caps, g = cfg_.detection.g_dim;
        // each W_ij is an MxG transformation matrix
        caps_w_ = Parameter("detection.W",
                            glorot_uniform({n_in, k_total, m, g}, m, g, init_rng));
    } else {
        const index_t f_prime = cfg_.f_prime();
        index_t d_in = f_prime * q;
        for (size_t li = 0; li < cfg_.mlp_dims.size(); ++li) {
            const index_t h = cfg_.mlp_dims[li];
            mlp_w_.emplace_back("mlp" + std::to_string(li) + ".weight",
                                glorot_uniform({d_in, h}, d_in, h, init_rng));
            mlp_b_.emplace_back("mlp" + std::to_string(li) + ".bias", Tensor::zeros({h}));
            d_in = h;
        }
        const index_t k = cfg_.detection.k_total - 1;
        out_w_ = Parameter("out.weight", glorot_uniform({d_in, k}, d_in, k, init_rng));
        out_b_ = Parameter("out.bias", Tensor::zeros({k}));
    }
}

void Model::set_routing_mode(const std::string& mode) {
    if (mode != "reset" && mode != "persistent")
        throw ShapeError("routing mode must be reset or persistent");
    cfg_.routing.mode = mode;
}

Var Model::cnn_blocks_forward(Tape& tape, Var x, bool train, Rng& rng) {
    for (size_t bi = 0; bi < blocks_.size(); ++bi) {
        const auto& bc = cfg_.blocks[bi];
        Block& blk = blocks_[bi];
        Var k = tape.leaf(blk.kernels);
        Var b = tape.leaf(blk.bias);
        x = ops::conv2d(x, k, b);
        x = bc.activation == "tanh" ? ops::tanh_act(x) : ops::relu(x);
        if (blk.has_bn)
            x = ops::batchnorm(x, tape.leaf(blk.bn_gamma), tape.leaf(blk.bn_beta), blk.bn, train);
        if (bc.pool_p > 1) x = ops::max_pool_freq(x, bc.pool_p);
        if (bc.dropout > 0.0) x = ops::dropout(x, bc.dropout, train, rng);
    }
    return x;
}

Model::Forward Model::forward(Tape& tape, const Tensor& window, bool train, Rng& rng,
                              const Tensor* beta_in) {
    const auto& in = cfg_.input;
    if (window.shape() != std::vector<index_t>{in.t_frames, in.f_bins, in.channels})
        throw ShapeError("forward: window shape does not match model input config");

    Var x = tape.input(window, false);
    Var fmap = cnn_blocks_forward(tape, x, train, rng);
    const index_t t_frames = in.t_frames;

    Forward fwd;
    if (cfg_.head == "capsule") {
        const auto& pc = cfg_.primary;
        const index_t f_prime = cfg_.f_prime();
        const index_t k_total = cfg_.detection.k_total;
        Var pk = tape.leaf(primary_kernels_);
        Var pb = tape.leaf(primary_bias_);
        Var pconv = ops::conv2d(fmap, pk, pb);  // [T, F', J*M]
        // channel c = j*M + m, so this is a pure relayout
        Var u = ops::reshape(pconv, {t_frames, f_prime * pc.j_kernels, pc.m_caps});
        u = ops::squash_lastdim(u);
        if (pc.dropout > 0.0) u = ops::dropout(u, pc.dropout, train, rng);

        Var w = tape.leaf(caps_w_);
        Var u_hat = ops::caps_predict(u, w);  // [T, N, K_total, G]
        RoutingResult routed = route_frames(u_hat, cfg_.routing.iterations, beta_in,
                                            cfg_.routing.stop_alpha_gradient);
        fwd.head_out = ops::capsule_norms(routed.v);  // [T, K_total]
        fwd.beta_out = std::move(routed.beta_last);

        const Tensor& norms = fwd.head_out.value();
        const index_t k = k_total - 1;  // background capsule is last, excluded
        fwd.probs = Tensor({t_frames, k});
        for (index_t t = 0; t < t_frames; ++t)
            for (index_t c = 0; c < k; ++c) fwd.probs.at(t, c) = norms.at(t, c);
    } else {
        const index_t f_prime = cfg_.f_prime();
        const index_t q = cfg_.blocks.back().n_kernels;
        Var h = ops::reshape(fmap, {t_frames, f_prime * q});
        for (size_t li = 0; li < mlp_w_.size(); ++li) {
            h = ops::dense(h, tape.leaf(mlp_w_[li]), tape.leaf(mlp_b_[li]));
            h = ops::sigmoid(h);
        }
        Var logits = ops::dense(h, tape.leaf(out_w_), tape.leaf(out_b_));
        fwd.head_out = logits;

        const Tensor& z = logits.value();
        fwd.probs = Tensor(z.shape());
        for (index_t i = 0; i < z.size(); ++i) {
            const double v = z[i];
            fwd.probs[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        }
    }
    return fwd;
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> ps;
    for (auto& b : blocks_) {
        ps.push_back(&b.kernels);
        ps.push_back(&b.bias);
        if (b.has_bn) {
            ps.push_back(&b.bn_gamma);
            ps.push_back(&b.bn_beta);
        }
    }
    if (cfg_.head == "capsule") {
        ps.push_back(&primary_kernels_);
        ps.push_back(&primary_bias_);
        ps.push_back(&caps_w_);
    } else {
        for (size_t i = 0; i < mlp_w_.size(); ++i) {
            ps.push_back(&mlp_w_[i]);
            ps.push_back(&mlp_b_[i]);
        }
        ps.push_back(&out_w_);
        ps.push_back(&out_b_);
    }
    return ps;
}

std::vector<const Parameter*> Model::parameters() const {
    auto ps = const_cast<Model*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

std::vector<Parameter*> Model::l2_parameters() {
    std::vector<Parameter*> ps;
    for (auto& b : blocks_) ps.push_back(&b.kernels);
    if (cfg_.head == "capsule") {
        ps.push_back(&primary_kernels_);
        ps.push_back(&caps_w_);
    } else {
        for (auto& w : mlp_w_) ps.push_back(&w);
        ps.push_back(&out_w_);
    }
    return ps;
}

std::vector<ops::BatchNormBuffers*> Model::bn_buffers() {
    std::vector<ops::BatchNormBuffers*> bs;
    for (auto& b : blocks_)
        if (b.has_bn) bs.push_back(&b.bn);
    return bs;
}

index_t Model::param_count() const {
    index_t n = 0;
    for (const Parameter* p : parameters()) n += p->value.size();
    return n;
}

std::vector<Model::CensusEntry> Model::census() const {
    std::vector<CensusEntry> out;
    for (const Parameter* p : parameters())
        out.push_back({p->name, p->value.shape(), p->value.size()});
    return out;
}

std::vector<Tensor> Model::state() const {
    std::vector<Tensor> st;
    for (const Parameter* p : parameters()) st.push_back(p->value);
    for (auto* b : const_cast<Model*>(this)->bn_buffers()) {
        st.push_back(b->running_mean);
        st.push_back(b->running_var);
    }
    return st;
}

void Model::load_state(const std::vector<Tensor>& state) {
    auto ps = parameters();
    auto bs = bn_buffers();
    if (state.size() != ps.size() + 2 * bs.size())
        throw DataError("load_state: tensor count mismatch (" + std::to_string(state.size()) +
                        " given, " + std::to_string(ps.size() + 2 * bs.size()) + " expected)");
    size_t i = 0;
    for (Parameter* p : ps) {
        if (!state[i].same_shape(p->value))
            throw DataError("load_state: shape mismatch for " + p->name);
        p->value = state[i++];
    }
    for (auto* b : bs) {
        b->running_mean = state[i++];
        b->running_var = state[i++];
    }
}

}  // namespace capsed
