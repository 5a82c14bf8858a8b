#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capsed/model/config.hpp"
#include "capsed/rng.hpp"

namespace capsed {

// Random-search ranges. CNN kernel counts are sampled log-uniformly, the
// other numeric ranges uniformly, binary choices by fair coin.
struct SearchSpace {
    int layers_min = 1, layers_max = 4;
    double kernels_min = 4, kernels_max = 64;  // log-uniform, rounded
    index_t kernel_dim_min = 3, kernel_dim_max = 8;
    index_t pool_min = 1, pool_max = 5;  // frequency axis; time pool is fixed at 1
    double dropout_min = 0.0, dropout_max = 0.5;
    index_t m_min = 2, m_max = 8;
    index_t primary_kernel_min = 3, primary_kernel_max = 5;
    index_t j_min = 2, j_max = 16;
    index_t g_min = 2, g_max = 16;
    double caps_dropout_min = 0.0, caps_dropout_max = 0.5;
    int routing_min = 1, routing_max = 5;
    std::vector<index_t> cnn_mlp_dims = {64};  // hidden layers of the cnn head
    int max_resample = 1000;

    std::string to_json() const;
    static SearchSpace from_json(const std::string& text);
};

// Draws one valid ModelConfig (resampling on invariant violations).
ModelConfig sample_config(const SearchSpace& space, Rng& rng, const InputConfig& input,
                          index_t k_total, const std::string& head);

struct TrialResult {
    int index = 0;
    ModelConfig config;
    index_t n_params = 0;
    double val_er = 0.0;
    bool failed = false;
    std::string error;
};

// Samples n_trials configs (per-trial derived seeds), evaluates each with
// the supplied callback (validation ER), and returns trials ranked by
// (val_er, fewer parameters, trial index). Failed trials rank last; all
// trials failing is an error carrying the per-trial diagnostics.
std::vector<TrialResult> random_search(
    const SearchSpace& space, const InputConfig& input, index_t k_total, const std::string& head,
    int n_trials, std::uint64_t seed,
    const std::function<double(const ModelConfig&, int trial_index)>& evaluate);

}  // namespace capsed
