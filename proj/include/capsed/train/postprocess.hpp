#pragma once

#include <vector>

#include "capsed/tensor.hpp"

namespace capsed {

// Normalized exponential-decay window of `len` frames; decay rate chosen so
// the last coefficient is 0.01 of the first, coefficients sum to 1.
std::vector<double> exp_decay_window(index_t len);

// Causal convolution of a probability curve with the decay window.
std::vector<double> convolve_decay(const std::vector<double>& curve, index_t decay_len);

// Centered sliding median, truncated at the borders; win must be odd.
std::vector<double> median_filter(const std::vector<double>& curve, index_t win);

struct MonoDecision {
    bool found = false;
    double onset = 0.0;
    double offset = 0.0;
};

// Single-class decision chain: decay smoothing, median filter, threshold,
// then the onset/offset of the longest suprathreshold run.
MonoDecision monophonic_postprocess(const std::vector<double>& probs, index_t decay_len,
                                    index_t median_win, double threshold, double frame_hop);

}  // namespace capsed
