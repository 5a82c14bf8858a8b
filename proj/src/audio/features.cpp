#include "capsed/audio/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "capsed/common.hpp"

namespace capsed {

using nlohmann::json;

namespace {

constexpr double kLogEps = 1e-10;

bool is_pow2(index_t n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 complex FFT with a precomputed twiddle table; reused
// across the frames of one file.
class Fft {
public:
    explicit Fft(index_t n) : n_(static_cast<size_t>(n)) {
        tw_re_.resize(n_ / 2);
        tw_im_.resize(n_ / 2);
        for (size_t k = 0; k < n_ / 2; ++k) {
            const double a = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n_);
            tw_re_[k] = std::cos(a);
            tw_im_[k] = std::sin(a);
        }
        re_.resize(n_);
        im_.resize(n_);
    }

    // Real input (zero padded by caller to n); magnitudes of bins 0..n/2.
    void real_magnitudes(const double* x, double* mags) {
        std::copy(x, x + n_, re_.begin());
        std::fill(im_.begin(), im_.end(), 0.0);
        transform();
        for (size_t k = 0; k <= n_ / 2; ++k) mags[k] = std::hypot(re_[k], im_[k]);
    }

private:
    void transform() {
        const size_t n = n_;
        for (size_t i = 1, j = 0; i < n; ++i) {
            size_t bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) {
                std::swap(re_[i], re_[j]);
                std::swap(im_[i], im_[j]);
            }
        }
        for (size_t len = 2; len <= n; len <<= 1) {
            const size_t stride = n / len;
            for (size_t i = 0; i < n; i += len) {
                for (size_t k = 0; k < len / 2; ++k) {
                    const double wr = tw_re_[k * stride];
                    const double wi = tw_im_[k * stride];
                    const size_t a = i + k, b = i + k + len / 2;
                    const double tr = re_[b] * wr - im_[b] * wi;
                    const double ti = re_[b] * wi + im_[b] * wr;
                    re_[b] = re_[a] - tr;
                    im_[b] = im_[a] - ti;
                    re_[a] += tr;
                    im_[a] += ti;
                }
            }
        }
    }

    size_t n_;
    std::vector<double> tw_re_, tw_im_, re_, im_;
};

}  // namespace

void FeatureConfig::validate() const {
    if (sample_rate <= 0) throw ShapeError("features: sample_rate must be positive");
    if (frame_len < 1 || hop < 1) throw ShapeError("features: frame_len/hop must be positive");
    if (frame_len > fft_size) throw ShapeError("features: frame_len must be <= fft_size");
    if (hop > frame_len) throw ShapeError("features: hop must be <= frame_len");
    if (!is_pow2(fft_size)) throw ShapeError("features: fft_size must be a power of two");
    if (n_mels < 1) throw ShapeError("features: n_mels must be >= 1");
    if (context_t < 1) throw ShapeError("features: context_t must be >= 1");
    if (channels != 1 && channels != 2) throw ShapeError("features: channels must be 1 or 2");
}

std::vector<double> make_window(WindowFn fn, index_t n) {
    std::vector<double> w(static_cast<size_t>(n), 1.0);
    if (n == 1) return w;
    for (index_t i = 0; i < n; ++i) {
        const double phase = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n - 1);
        switch (fn) {
            case WindowFn::hann: w[i] = 0.5 - 0.5 * std::cos(phase); break;
            case WindowFn::hamming: w[i] = 0.54 - 0.46 * std::cos(phase); break;
            case WindowFn::rect: break;
        }
    }
    return w;
}

Tensor stft_magnitudes(const std::vector<double>& wave, const FeatureConfig& cfg) {
    cfg.validate();
    const index_t len = static_cast<index_t>(wave.size());
    if (len < cfg.frame_len)
        throw DataError("stft: input of " + std::to_string(len) + " samples shorter than frame (" +
                        std::to_string(cfg.frame_len) + ")");
    const index_t n_frames = 1 + (len - cfg.frame_len) / cfg.hop;
    const index_t n_bins = cfg.n_bins();
    const std::vector<double> win = make_window(cfg.window, cfg.frame_len);

    Tensor out({n_frames, n_bins});
    Fft fft(cfg.fft_size);
    std::vector<double> frame(static_cast<size_t>(cfg.fft_size), 0.0);
    for (index_t f = 0; f < n_frames; ++f) {
        const double* src = wave.data() + f * cfg.hop;
        for (index_t i = 0; i < cfg.frame_len; ++i) frame[static_cast<size_t>(i)] = src[i] * win[static_cast<size_t>(i)];
        // zero pad frame_len..fft_size
        std::fill(frame.begin() + static_cast<size_t>(cfg.frame_len), frame.end(), 0.0);
        fft.real_magnitudes(frame.data(), out.data() + f * n_bins);
    }
    return out;
}

Tensor stft_log_energy(const std::vector<double>& wave, const FeatureConfig& cfg) {
    Tensor mags = stft_magnitudes(wave, cfg);
    for (index_t i = 0; i < mags.size(); ++i) mags[i] = std::log(mags[i] * mags[i] + kLogEps);
    return mags;
}

double hz_to_mel_slaney(double hz) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    const double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz_slaney(double mel) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    const double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

Tensor mel_filterbank(const FeatureConfig& cfg) {
    const index_t n_bins = cfg.n_bins();
    const double f_max = cfg.sample_rate / 2.0;
    const double mel_max = hz_to_mel_slaney(f_max);
    std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
    for (size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz_slaney(mel_max * static_cast<double>(i) /
                                    static_cast<double>(cfg.n_mels + 1));

    Tensor fb = Tensor::zeros({cfg.n_mels, n_bins});
    for (index_t m = 0; m < cfg.n_mels; ++m) {
        const double f_lo = edges[static_cast<size_t>(m)];
        const double f_c = edges[static_cast<size_t>(m) + 1];
        const double f_hi = edges[static_cast<size_t>(m) + 2];
        const double rise = std::max(f_c - f_lo, 1e-9);
        const double fall = std::max(f_hi - f_c, 1e-9);
        const double norm = cfg.mel_area_normalize ? 2.0 / std::max(f_hi - f_lo, 1e-9) : 1.0;
        for (index_t k = 0; k < n_bins; ++k) {
            const double fk =
                static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
            double w = 0.0;
            if (fk > f_lo && fk < f_c)
                w = (fk - f_lo) / rise;
            else if (fk >= f_c && fk < f_hi)
                w = (f_hi - fk) / fall;
            fb.at(m, k) = w * norm;
        }
    }
    return fb;
}

Tensor logmel(const std::vector<double>& wave, const FeatureConfig& cfg) {
    Tensor mags = stft_magnitudes(wave, cfg);
    const index_t n_frames = mags.dim(0);
    const index_t n_bins = mags.dim(1);
    const Tensor fb = mel_filterbank(cfg);
    Tensor out({n_frames, cfg.n_mels});
    for (index_t f = 0; f < n_frames; ++f) {
        for (index_t m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            for (index_t k = 0; k < n_bins; ++k) {
                const double mag = mags.at(f, k);
                acc += fb.at(m, k) * (mag * mag);
            }
            out.at(f, m) = std::log(acc + kLogEps);
        }
    }
    return out;
}

Tensor extract_features(const WavData& wav, const FeatureConfig& cfg) {
    cfg.validate();
    if (wav.sample_rate != cfg.sample_rate)
        throw DataError("features: file sample rate " + std::to_string(wav.sample_rate) +
                        " != configured " + std::to_string(cfg.sample_rate) +
                        " (no resampling is performed)");
    if (static_cast<index_t>(wav.n_channels()) != cfg.channels)
        throw DataError("features: file has " + std::to_string(wav.n_channels()) +
                        " channel(s), config expects " + std::to_string(cfg.channels));
    std::vector<Tensor> per_channel;
    per_channel.reserve(wav.n_channels());
    for (const auto& ch : wav.channels)
        per_channel.push_back(cfg.kind == FeatureKind::stft_mag ? stft_log_energy(ch, cfg)
                                                                : logmel(ch, cfg));
    const index_t n_frames = per_channel[0].dim(0);
    const index_t F = per_channel[0].dim(1);
    const index_t C = cfg.channels;
    Tensor out({n_frames, F, C});
    for (index_t f = 0; f < n_frames; ++f)
        for (index_t b = 0; b < F; ++b)
            for (index_t c = 0; c < C; ++c) out.at(f, b, c) = per_channel[static_cast<size_t>(c)].at(f, b);
    return out;
}

NormStats fit_norm(const std::vector<Tensor>& feature_mats) {
    if (feature_mats.empty()) throw DataError("fit_norm: no feature matrices");
    const auto& s0 = feature_mats[0].shape();
    if (s0.size() != 3) throw ShapeError("fit_norm: matrices must be [frames,F,C]");
    const index_t F = s0[1], C = s0[2];
    index_t total = 0;
    for (const auto& m : feature_mats) {
        if (m.shape().size() != 3 || m.dim(1) != F || m.dim(2) != C)
            throw ShapeError("fit_norm: inconsistent feature shapes");
        total += m.dim(0);
    }
    if (total < 2) throw DataError("fit_norm: need at least 2 frames");

    NormStats st;
    st.mean = Tensor::zeros({F, C});
    st.stddev = Tensor::zeros({F, C});
    for (const auto& m : feature_mats)
        for (index_t f = 0; f < m.dim(0); ++f)
            for (index_t b = 0; b < F; ++b)
                for (index_t c = 0; c < C; ++c) st.mean.at(b, c) += m.at(f, b, c);
    for (index_t i = 0; i < st.mean.size(); ++i) st.mean[i] /= static_cast<double>(total);
    for (const auto& m : feature_mats)
        for (index_t f = 0; f < m.dim(0); ++f)
            for (index_t b = 0; b < F; ++b)
                for (index_t c = 0; c < C; ++c) {
                    const double d = m.at(f, b, c) - st.mean.at(b, c);
                    st.stddev.at(b, c) += d * d;
                }
    for (index_t i = 0; i < st.stddev.size(); ++i) {
        double sd = std::sqrt(st.stddev[i] / static_cast<double>(total));  // population std
        if (sd < 1e-8) {
            sd = 1e-8;
            st.floored_bins.push_back(i);
        }
        st.stddev[i] = sd;
    }
    return st;
}

Tensor apply_norm(const Tensor& mat, const NormStats& stats) {
    if (mat.shape().size() != 3) throw ShapeError("apply_norm: matrix must be [frames,F,C]");
    const index_t F = mat.dim(1), C = mat.dim(2);
    if (stats.mean.shape() != std::vector<index_t>{F, C})
        throw ShapeError("apply_norm: stats shape mismatch");
    Tensor out = mat;
    for (index_t f = 0; f < mat.dim(0); ++f)
        for (index_t b = 0; b < F; ++b)
            for (index_t c = 0; c < C; ++c)
                out.at(f, b, c) = (mat.at(f, b, c) - stats.mean.at(b, c)) / stats.stddev.at(b, c);
    return out;
}

std::vector<FeatureWindow> window_stream(const Tensor& mat, index_t context_t,
                                         index_t hop_windows, const std::string& source_id) {
    if (mat.shape().size() != 3) throw ShapeError("window_stream: matrix must be [frames,F,C]");
    if (context_t < 1) throw ShapeError("window_stream: context_t must be >= 1");
    const index_t frames = mat.dim(0), F = mat.dim(1), C = mat.dim(2);
    const index_t hop = hop_windows > 0 ? hop_windows : context_t;

    std::vector<FeatureWindow> windows;
    for (index_t start = 0; start < frames; start += hop) {
        FeatureWindow w;
        w.values = Tensor::zeros({context_t, F, C});
        w.start_frame = start;
        w.valid_frames = std::min(context_t, frames - start);
        w.source_id = source_id;
        const index_t row = F * C;
        for (index_t t = 0; t < w.valid_frames; ++t)
            std::copy(mat.data() + (start + t) * row, mat.data() + (start + t + 1) * row,
                      w.values.data() + t * row);
        windows.push_back(std::move(w));
    }
    return windows;
}

// ---- NormStats text format ----

std::string norm_stats_to_text(const NormStats& stats) {
    const index_t F = stats.mean.dim(0), C = stats.mean.dim(1);
    std::ostringstream os;
    os << "capsed_normstats 1\n";
    os << "bins " << F << "\n";
    os << "channels " << C << "\n";
    char buf[40];
    os << "mean";
    for (index_t i = 0; i < stats.mean.size(); ++i) {
        std::snprintf(buf, sizeof(buf), " %.17g", stats.mean[i]);
        os << buf;
    }
    os << "\nstd";
    for (index_t i = 0; i < stats.stddev.size(); ++i) {
        std::snprintf(buf, sizeof(buf), " %.17g", stats.stddev[i]);
        os << buf;
    }
    os << "\n";
    return os.str();
}

NormStats norm_stats_from_text(const std::string& text) {
    std::istringstream in(text);
    std::string tag;
    int version = 0;
    in >> tag >> version;
    if (tag != "capsed_normstats" || version != 1)
        throw DataError("normstats: unrecognized header");
    std::string key;
    index_t F = 0, C = 0;
    in >> key >> F;
    if (key != "bins" || F < 1) throw DataError("normstats: bad bins line");
    in >> key >> C;
    if (key != "channels" || C < 1) throw DataError("normstats: bad channels line");
    NormStats st;
    st.mean = Tensor::zeros({F, C});
    st.stddev = Tensor::zeros({F, C});
    in >> key;
    if (key != "mean") throw DataError("normstats: expected mean");
    for (index_t i = 0; i < st.mean.size(); ++i)
        if (!(in >> st.mean[i])) throw DataError("normstats: truncated mean values");
    in >> key;
    if (key != "std") throw DataError("normstats: expected std");
    for (index_t i = 0; i < st.stddev.size(); ++i) {
        if (!(in >> st.stddev[i])) throw DataError("normstats: truncated std values");
        if (st.stddev[i] <= 0) throw DataError("normstats: nonpositive std");
    }
    return st;
}

void save_norm_stats(const std::string& path, const NormStats& stats) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << norm_stats_to_text(stats);
    if (!out) throw DataError(path + ": write failed");
}

NormStats load_norm_stats(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return norm_stats_from_text(ss.str());
}

// ---- FeatureConfig JSON ----

std::string FeatureConfig::to_json() const {
    json j;
    j["sample_rate"] = sample_rate;
    j["frame_len"] = frame_len;
    j["hop"] = hop;
    j["fft_size"] = fft_size;
    j["kind"] = kind == FeatureKind::stft_mag ? "stft_mag" : "logmel";
    j["n_mels"] = n_mels;
    j["context_t"] = context_t;
    j["channels"] = channels;
    j["window"] = window == WindowFn::hann ? "hann"
                  : window == WindowFn::hamming ? "hamming"
                                                : "rect";
    j["mel_area_normalize"] = mel_area_normalize;
    return j.dump(2);
}

FeatureConfig FeatureConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("feature config: invalid JSON: ") + e.what());
    }
    FeatureConfig c;
    c.sample_rate = j.value("sample_rate", 16000);
    c.frame_len = j.value("frame_len", index_t{640});
    c.hop = j.value("hop", index_t{320});
    c.fft_size = j.value("fft_size", index_t{1024});
    const std::string kind = j.value("kind", "logmel");
    if (kind == "stft_mag")
        c.kind = FeatureKind::stft_mag;
    else if (kind == "logmel")
        c.kind = FeatureKind::logmel;
    else
        throw DataError("feature config: unknown kind '" + kind + "'");
    c.n_mels = j.value("n_mels", index_t{40});
    c.context_t = j.value("context_t", index_t{256});
    c.channels = j.value("channels", index_t{1});
    const std::string win = j.value("window", "hann");
    if (win == "hann")
        c.window = WindowFn::hann;
    else if (win == "hamming")
        c.window = WindowFn::hamming;
    else if (win == "rect")
        c.window = WindowFn::rect;
    else
        throw DataError("feature config: unknown window '" + win + "'");
    c.mel_area_normalize = j.value("mel_area_normalize", false);
    c.validate();
    return c;
}

}  // namespace capsed
