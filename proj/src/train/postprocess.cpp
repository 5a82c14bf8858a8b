#include "capsed/train/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "capsed/common.hpp"

namespace capsed {

std::vector<double> exp_decay_window(index_t len) {
    if (len < 1) throw ShapeError("exp_decay_window: len must be >= 1");
    std::vector<double> w(static_cast<size_t>(len));
    const double gamma = len > 1 ? std::log(100.0) / static_cast<double>(len - 1) : 0.0;
    double sum = 0.0;
    for (index_t n = 0; n < len; ++n) {
        w[static_cast<size_t>(n)] = std::exp(-gamma * static_cast<double>(n));
        sum += w[static_cast<size_t>(n)];
    }
    for (double& x : w) x /= sum;
    return w;
}

std::vector<double> convolve_decay(const std::vector<double>& curve, index_t decay_len) {
    const std::vector<double> w = exp_decay_window(decay_len);
    std::vector<double> out(curve.size(), 0.0);
    for (size_t t = 0; t < curve.size(); ++t) {
        double acc = 0.0;
        for (size_t n = 0; n < w.size() && n <= t; ++n) acc += w[n] * curve[t - n];
        out[t] = acc;
    }
    return out;
}

std::vector<double> median_filter(const std::vector<double>& curve, index_t win) {
    if (win < 1 || win % 2 == 0)
        throw ShapeError("median_filter: window must be odd, got " + std::to_string(win));
    const index_t half = win / 2;
    const index_t n = static_cast<index_t>(curve.size());
    std::vector<double> out(curve.size());
    std::vector<double> buf;
    for (index_t t = 0; t < n; ++t) {
        const index_t lo = std::max<index_t>(0, t - half);
        const index_t hi = std::min<index_t>(n - 1, t + half);
        buf.assign(curve.begin() + lo, curve.begin() + hi + 1);
        std::sort(buf.begin(), buf.end());
        out[static_cast<size_t>(t)] = buf[buf.size() / 2];
    }
    return out;
}

MonoDecision monophonic_postprocess(const std::vector<double>& probs, index_t decay_len,
                                    index_t median_win, double threshold, double frame_hop) {
    MonoDecision d;
    if (probs.empty()) return d;
    std::vector<double> c = convolve_decay(probs, decay_len);
    c = median_filter(c, median_win);

    index_t best_start = -1, best_len = 0;
    index_t run_start = -1;
    const index_t n = static_cast<index_t>(c.size());
    for (index_t t = 0; t <= n; ++t) {
        const bool on = t < n && c[static_cast<size_t>(t)] >= threshold;
        if (on && run_start < 0) run_start = t;
        if (!on && run_start >= 0) {
            const index_t len = t - run_start;
            if (len > best_len) {
                best_len = len;
                best_start = run_start;
            }
            run_start = -1;
        }
    }
    if (best_len > 0) {
        d.found = true;
        d.onset = static_cast<double>(best_start) * frame_hop;
        d.offset = static_cast<double>(best_start + best_len) * frame_hop;
    }
    return d;
}

}  // namespace capsed
