#pragma once

#include <memory>
#include <string>
#include <vector>

#include "capsed/model/config.hpp"
#include "capsed/model/routing.hpp"
#include "capsed/ops.hpp"
#include "capsed/rng.hpp"
#include "capsed/tape.hpp"

namespace capsed {

// CNN feature blocks + Primary Capsule layer + time-distributed Detection
// Capsule layer with routing-by-agreement, or the plain-CNN comparison head
// (time-distributed dense layers with sigmoid activations).
class Model {
public:
    Model(ModelConfig cfg, Rng& init_rng);

    struct Forward {
        // capsule head: capsule norms [T, K_total]; cnn head: logits [T, K]
        Var head_out;
        // activity probabilities [T, K] (background capsule excluded)
        Tensor probs;
        // routing carry-out (capsule head only); empty for cnn head
        Tensor beta_out;
    };

    // One window [T,F,C] on the given tape. beta_in: carried routing logits
    // for persistent mode (nullptr = zeros, i.e. stream start / reset mode).
    Forward forward(Tape& tape, const Tensor& window, bool train, Rng& rng,
                    const Tensor* beta_in = nullptr);

    const ModelConfig& config() const { return cfg_; }
    void set_routing_mode(const std::string& mode);

    std::vector<Parameter*> parameters();              // declaration order
    std::vector<const Parameter*> parameters() const;
    std::vector<Parameter*> l2_parameters();           // weights only, no biases/BN
    std::vector<ops::BatchNormBuffers*> bn_buffers();  // declaration order

    index_t param_count() const;  // trainable scalars

    struct CensusEntry {
        std::string name;
        std::vector<index_t> shape;
        index_t count;
    };
    std::vector<CensusEntry> census() const;

    // Full state (parameters then BN running buffers), for early-stopping
    // snapshots and checkpoints.
    std::vector<Tensor> state() const;
    void load_state(const std::vector<Tensor>& state);

private:
    struct Block {
        Parameter kernels, bias;
        Parameter bn_gamma, bn_beta;  // only when batchnorm
        ops::BatchNormBuffers bn;
        bool has_bn = false;
    };

    Var cnn_blocks_forward(Tape& tape, Var x, bool train, Rng& rng);

    ModelConfig cfg_;
    std::vector<Block> blocks_;
    // capsule head
    Parameter primary_kernels_, primary_bias_;
    Parameter caps_w_;  // [N, K_total, M, G], no bias
    // cnn head
    std::vector<Parameter> mlp_w_, mlp_b_;
    Parameter out_w_, out_b_;
};

double glorot_limit(index_t fan_in, index_t fan_out);
Tensor glorot_uniform(const std::vector<index_t>& shape, index_t fan_in, index_t fan_out,
                      Rng& rng);

}  // namespace capsed
