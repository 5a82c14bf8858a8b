#include "capsed/data/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "capsed/audio/wav.hpp"
#include "capsed/common.hpp"

namespace capsed {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kGtFrameHop = 0.02;

// kind 0: harmonic stack, kind 1: band-limited noise burst, kind 2: chirp
int prototype_kind(int class_idx) { return class_idx % 3; }

void apply_fade(std::vector<double>& x, int sample_rate) {
    const size_t fade = std::min(x.size() / 2, static_cast<size_t>(sample_rate / 100));  // 10 ms
    for (size_t i = 0; i < fade; ++i) {
        const double w = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(i) / static_cast<double>(fade));
        x[i] *= w;
        x[x.size() - 1 - i] *= w;
    }
}

void normalize_rms(std::vector<double>& x) {
    double p = 0.0;
    for (double v : x) p += v * v;
    p = std::sqrt(p / static_cast<double>(x.size()));
    if (p > 0.0)
        for (double& v : x) v /= p;
}

}  // namespace

std::vector<double> render_event_prototype(int class_idx, int n_classes, double dur_s,
                                           int sample_rate, Rng& rng) {
    if (class_idx < 0 || class_idx >= n_classes)
        throw ShapeError("render_event_prototype: class index out of range");
    const size_t n = static_cast<size_t>(dur_s * sample_rate);
    std::vector<double> x(n, 0.0);
    const int kind = prototype_kind(class_idx);
    const int variant = class_idx / 3;  // shifts parameters for K > 3
    const double sr = static_cast<double>(sample_rate);

    if (kind == 0) {
        // stationary harmonic stack, distinct fundamental per variant
        const double f0 = 220.0 * (1.0 + 0.5 * variant);
        const double phase0 = rng.uniform(0.0, 2.0 * M_PI);
        for (int h = 1; h <= 5; ++h) {
            const double amp = 1.0 / h;
            const double w = 2.0 * M_PI * f0 * h / sr;
            for (size_t i = 0; i < n; ++i) x[i] += amp * std::sin(w * static_cast<double>(i) + phase0 * h);
        }
    } else if (kind == 1) {
        // impulsive band-limited noise burst: random-phase sinusoid comb
        const double f_lo = 2800.0 + 900.0 * variant;
        const double f_hi = f_lo + 2200.0;
        const int n_comp = 80;
        for (int c = 0; c < n_comp; ++c) {
            const double f = rng.uniform(f_lo, std::min(f_hi, sr / 2.0 - 200.0));
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            const double w = 2.0 * M_PI * f / sr;
            for (size_t i = 0; i < n; ++i) x[i] += std::sin(w * static_cast<double>(i) + phase);
        }
        // sharper attack envelope
        for (size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / static_cast<double>(n);
            x[i] *= std::exp(-2.5 * t);
        }
    } else {
        // linear chirp
        const double f0 = 450.0 + 250.0 * variant;
        const double f1 = 3800.0 + 250.0 * variant;
        const double phase0 = rng.uniform(0.0, 2.0 * M_PI);
        for (size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / sr;
            const double phase = 2.0 * M_PI * (f0 * t + 0.5 * (f1 - f0) * t * t / dur_s);
            x[i] = std::sin(phase + phase0);
        }
    }
    normalize_rms(x);
    apply_fade(x, sample_rate);
    return x;
}

std::vector<double> render_background(size_t n_samples, Rng& rng) {
    // Voss-McCartney: one white row plus rows updated at octave intervals
    constexpr int rows = 9;
    double row_val[rows];
    for (int r = 0; r < rows; ++r) row_val[r] = rng.uniform(-1.0, 1.0);
    std::vector<double> x(n_samples);
    for (size_t i = 0; i < n_samples; ++i) {
        for (int r = 1; r < rows; ++r)
            if (i % (static_cast<size_t>(1) << r) == 0) row_val[r] = rng.uniform(-1.0, 1.0);
        row_val[0] = rng.uniform(-1.0, 1.0);
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) acc += row_val[r];
        x[i] = acc / rows;
    }
    normalize_rms(x);
    return x;
}

double measure_overlap_fraction(const EventRoll& roll) {
    index_t active = 0, overlapped = 0;
    for (index_t t = 0; t < roll.n_frames(); ++t) {
        int n = 0;
        for (index_t k = 0; k < roll.n_classes(); ++k)
            if (roll.activity.at(t, k) != 0.0) ++n;
        if (n >= 1) ++active;
        if (n >= 2) ++overlapped;
    }
    return active == 0 ? 0.0 : static_cast<double>(overlapped) / static_cast<double>(active);
}

std::vector<std::string> SynthSpec::effective_labels() const {
    if (!labels.empty()) return labels;
    std::vector<std::string> out;
    const char* kind_names[3] = {"tone", "burst", "chirp"};
    for (int k = 0; k < n_classes; ++k) {
        std::string name = kind_names[prototype_kind(k)];
        if (k >= 3) name += std::to_string(k / 3 + 1);
        out.push_back(std::move(name));
    }
    return out;
}

void SynthSpec::validate() const {
    if (n_classes < 1) throw DataError("synth: n_classes must be >= 1");
    if (!labels.empty() && static_cast<int>(labels.size()) != n_classes)
        throw DataError("synth: labels list must match n_classes");
    if (n_files < 1) throw DataError("synth: n_files must be >= 1");
    if (file_len_s <= 1.0) throw DataError("synth: file_len_s must exceed 1 s");
    if (sample_rate < 8000) throw DataError("synth: sample_rate too low");
    if (events_per_file_min < 1 || events_per_file_max < events_per_file_min)
        throw DataError("synth: bad events_per_file range");
    if (event_len_min_s <= 0.05 || event_len_max_s < event_len_min_s)
        throw DataError("synth: bad event length range");
    if (overlap_fraction < 0.0 || overlap_fraction > 0.9)
        throw DataError("synth: overlap_fraction must be in [0, 0.9]");
    if (background_rms <= 0.0 || background_rms > 0.3)
        throw DataError("synth: background_rms must be in (0, 0.3]");
}

std::string SynthSpec::to_json() const {
    json j;
    j["n_classes"] = n_classes;
    j["labels"] = labels;
    j["n_files"] = n_files;
    j["file_len_s"] = file_len_s;
    j["sample_rate"] = sample_rate;
    j["events_per_file"] = {events_per_file_min, events_per_file_max};
    j["event_len_s"] = {event_len_min_s, event_len_max_s};
    j["overlap_fraction"] = overlap_fraction;
    j["snr_db"] = snr_db;
    j["background_rms"] = background_rms;
    j["seed"] = seed;
    j["scene"] = scene;
    return j.dump(2);
}

SynthSpec SynthSpec::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("synth spec: invalid JSON: ") + e.what());
    }
    SynthSpec s;
    s.n_classes = j.value("n_classes", 3);
    if (j.contains("labels")) s.labels = j["labels"].get<std::vector<std::string>>();
    s.n_files = j.value("n_files", 30);
    s.file_len_s = j.value("file_len_s", 40.0);
    s.sample_rate = j.value("sample_rate", 16000);
    if (j.contains("events_per_file")) {
        s.events_per_file_min = j["events_per_file"].at(0);
        s.events_per_file_max = j["events_per_file"].at(1);
    }
    if (j.contains("event_len_s")) {
        s.event_len_min_s = j["event_len_s"].at(0);
        s.event_len_max_s = j["event_len_s"].at(1);
    }
    s.overlap_fraction = j.value("overlap_fraction", 0.3);
    s.snr_db = j.value("snr_db", 6.0);
    s.background_rms = j.value("background_rms", 0.05);
    s.seed = j.value("seed", std::uint64_t{1});
    s.scene = j.value("scene", "synthetic");
    s.validate();
    return s;
}

namespace {

struct PlacedEvent {
    double onset, offset;
    int class_idx;
};

EventList synthesize_one_file(const SynthSpec& spec, std::uint64_t file_idx,
                              std::vector<double>& mix) {
    Rng rng = Rng::derive(spec.seed, 0xf11e0000u + file_idx);
    const size_t n_samples = static_cast<size_t>(spec.file_len_s * spec.sample_rate);
    mix = render_background(n_samples, rng);
    for (double& v : mix) v *= spec.background_rms;

    const double event_amp = spec.background_rms * std::pow(10.0, spec.snr_db / 20.0);
    const auto labels = spec.effective_labels();
    const int n_events = static_cast<int>(
        rng.randint(spec.events_per_file_min, spec.events_per_file_max));

    std::vector<PlacedEvent> placed;
    EventList ground_truth;
    double cursor = rng.uniform(0.3, 1.0);
    const index_t gt_frames = static_cast<index_t>(spec.file_len_s / kGtFrameHop);

    for (int e = 0; e < n_events; ++e) {
        const double dur = rng.uniform(spec.event_len_min_s, spec.event_len_max_s);

        bool overlap_now = false;
        if (!placed.empty() && spec.overlap_fraction > 0.0 && spec.n_classes >= 2) {
            EventRoll roll = roll_from_events(ground_truth, kGtFrameHop, gt_frames, labels);
            overlap_now = measure_overlap_fraction(roll) < spec.overlap_fraction;
        }

        double onset;
        int class_idx;
        if (overlap_now) {
            const PlacedEvent& prev = placed.back();
            onset = prev.onset + rng.uniform(0.15, 0.45) * (prev.offset - prev.onset);
            do {
                class_idx = static_cast<int>(rng.randint(0, spec.n_classes - 1));
            } while (class_idx == prev.class_idx);
        } else {
            onset = cursor + rng.uniform(0.25, 0.9);
            class_idx = static_cast<int>(rng.randint(0, spec.n_classes - 1));
        }
        const double offset = onset + dur;
        if (offset > spec.file_len_s - 0.05) break;

        std::vector<double> ev = render_event_prototype(class_idx, spec.n_classes, dur,
                                                        spec.sample_rate, rng);
        const size_t start = static_cast<size_t>(onset * spec.sample_rate);
        for (size_t i = 0; i < ev.size() && start + i < mix.size(); ++i)
            mix[start + i] += event_amp * ev[i];

        placed.push_back({onset, offset, class_idx});
        ground_truth.push_back({onset, offset, labels[static_cast<size_t>(class_idx)]});
        cursor = std::max(cursor, offset);
    }

    // headroom guard; synthesis levels make this a no-op in practice
    double peak = 0.0;
    for (double v : mix) peak = std::max(peak, std::abs(v));
    if (peak >= 1.0)
        for (double& v : mix) v *= 0.99 / peak;

    std::sort(ground_truth.begin(), ground_truth.end(), [](const Event& a, const Event& b) {
        if (a.onset != b.onset) return a.onset < b.onset;
        return a.label < b.label;
    });
    return ground_truth;
}

}  // namespace

Manifest synthesize_dataset(const SynthSpec& spec, const std::string& out_dir, size_t jobs,
                            std::vector<EventList>* event_log) {
    spec.validate();
    fs::create_directories(out_dir);

    Manifest manifest;
    manifest.base_dir = out_dir;
    manifest.entries.resize(static_cast<size_t>(spec.n_files));
    if (event_log) event_log->assign(static_cast<size_t>(spec.n_files), {});

    std::atomic<size_t> next{0};
    std::mutex err_mutex;
    std::string first_error;

    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= static_cast<size_t>(spec.n_files)) return;
            try {
                char stem[32];
                std::snprintf(stem, sizeof(stem), "file_%03zu", i);
                std::vector<double> mix;
                const EventList gt = synthesize_one_file(spec, i, mix);
                const std::string wav_rel = std::string(stem) + ".wav";
                const std::string tsv_rel = std::string(stem) + ".tsv";
                write_wav16((fs::path(out_dir) / wav_rel).string(), {mix}, spec.sample_rate);
                write_annotations((fs::path(out_dir) / tsv_rel).string(), gt);
                manifest.entries[i] = {wav_rel, tsv_rel, spec.scene, -1};
                if (event_log) (*event_log)[i] = gt;
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lk(err_mutex);
                if (first_error.empty()) first_error = e.what();
            }
        }
    };

    const size_t n_workers = std::max<size_t>(1, std::min(jobs, static_cast<size_t>(spec.n_files)));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (!first_error.empty()) throw DataError("synthesize_dataset: " + first_error);

    make_folds(manifest, std::min(4, spec.n_files), spec.seed);
    save_manifest((fs::path(out_dir) / "manifest.tsv").string(), manifest);
    return manifest;
}

}  // namespace capsed
