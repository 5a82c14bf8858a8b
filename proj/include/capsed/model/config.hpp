#pragma once

#include <string>
#include <vector>

#include "capsed/common.hpp"

namespace capsed {

struct CnnBlockConfig {
    index_t n_kernels = 8;
    index_t kernel_h = 3;
    index_t kernel_w = 3;
    index_t pool_p = 2;             // frequency-axis pool
    std::string activation = "relu";  // relu | tanh
    double dropout = 0.0;
    bool batchnorm = false;
};

struct PrimaryCapsConfig {
    index_t m_caps = 4;    // M capsule channels
    index_t kernel_h = 3;
    index_t kernel_w = 3;
    index_t j_kernels = 4;  // J kernels per capsule
    double dropout = 0.0;   // capsules dropout, applied after squashing
};

struct DetectionCapsConfig {
    index_t k_total = 2;  // target classes K + 1 background
    index_t g_dim = 4;
};

struct RoutingConfig {
    int iterations = 3;
    std::string mode = "reset";  // reset | persistent
    bool stop_alpha_gradient = false;
};

struct InputConfig {
    index_t t_frames = 256;
    index_t f_bins = 40;
    index_t channels = 1;
};

struct ModelConfig {
    InputConfig input;
    std::vector<CnnBlockConfig> blocks;
    PrimaryCapsConfig primary;
    DetectionCapsConfig detection;
    RoutingConfig routing;
    std::string head = "capsule";   // capsule | cnn
    std::vector<index_t> mlp_dims;  // hidden layers of the cnn comparison head
    bool l2_enabled = false;
    double l2_lambda = 0.01;

    // Frequency extent after the CNN blocks (truncating pooling).
    index_t f_prime() const;
    // Input capsule count N = F' * J.
    index_t n_in() const { return f_prime() * primary.j_kernels; }

    void validate() const;  // throws ShapeError with the first violation

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);

    // Architectures of the paper's best polyphonic models: "home" (binaural
    // STFT input) and "street" (monaural STFT input).
    static ModelConfig preset(const std::string& name);
};

}  // namespace capsed
