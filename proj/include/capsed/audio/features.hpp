#pragma once

#include <string>
#include <vector>

#include "capsed/audio/wav.hpp"
#include "capsed/tensor.hpp"

namespace capsed {

enum class FeatureKind { stft_mag, logmel };
enum class WindowFn { hann, hamming, rect };

struct FeatureConfig {
    int sample_rate = 16000;
    index_t frame_len = 640;  // 40 ms at 16 kHz
    index_t hop = 320;        // 20 ms
    index_t fft_size = 1024;  // power of two
    FeatureKind kind = FeatureKind::logmel;
    index_t n_mels = 40;
    index_t context_t = 256;
    index_t channels = 1;
    WindowFn window = WindowFn::hann;
    bool mel_area_normalize = false;  // default: peak-1 triangles

    index_t n_bins() const { return fft_size / 2 + 1; }
    index_t feature_dim() const { return kind == FeatureKind::stft_mag ? n_bins() : n_mels; }
    double frame_hop_s() const { return static_cast<double>(hop) / sample_rate; }

    void validate() const;
    std::string to_json() const;
    static FeatureConfig from_json(const std::string& text);
};

// Per-bin, per-channel normalization statistics fitted on training features.
struct NormStats {
    Tensor mean;  // [F,C]
    Tensor stddev;  // [F,C], floored at 1e-8
    std::vector<index_t> floored_bins;  // flat (f*C+c) indices where the floor fired

    bool empty() const { return mean.empty(); }
};

struct FeatureWindow {
    Tensor values;  // [T,F,C]
    index_t start_frame = 0;
    index_t valid_frames = 0;  // trailing T-valid_frames frames are zero padding
    std::string source_id;
};

std::vector<double> make_window(WindowFn fn, index_t n);

// Magnitudes of bins 0..fft/2 for each frame, before the log. [frames, F].
Tensor stft_magnitudes(const std::vector<double>& wave, const FeatureConfig& cfg);

// log(mag^2 + 1e-10). [frames, F]
Tensor stft_log_energy(const std::vector<double>& wave, const FeatureConfig& cfg);

// Triangular mel filterbank on the Slaney scale, 0 Hz .. sr/2. [n_mels, n_bins]
Tensor mel_filterbank(const FeatureConfig& cfg);
double hz_to_mel_slaney(double hz);
double mel_to_hz_slaney(double mel);

// log(filterbank * power + 1e-10). [frames, n_mels]
Tensor logmel(const std::vector<double>& wave, const FeatureConfig& cfg);

// Full pipeline for a decoded file: validates rate/channel count against the
// config and stacks per-channel feature matrices into [frames, F, C].
Tensor extract_features(const WavData& wav, const FeatureConfig& cfg);

// Per-bin-per-channel mean and population std over the frames of all given
// [frames,F,C] matrices. Needs >= 2 total frames.
NormStats fit_norm(const std::vector<Tensor>& feature_mats);
Tensor apply_norm(const Tensor& mat, const NormStats& stats);

// Splits [frames,F,C] into T-frame windows (hop_windows <= 0 means
// non-overlapping, i.e. hop = context_t). The final partial window is
// zero-padded with valid_frames recording the real frame count.
std::vector<FeatureWindow> window_stream(const Tensor& mat, index_t context_t,
                                         index_t hop_windows, const std::string& source_id);

// NormStats text file (see README for the format).
void save_norm_stats(const std::string& path, const NormStats& stats);
NormStats load_norm_stats(const std::string& path);
std::string norm_stats_to_text(const NormStats& stats);
NormStats norm_stats_from_text(const std::string& text);

}  // namespace capsed
