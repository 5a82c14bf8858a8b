#pragma once

#include <string>
#include <vector>

#include "capsed/data/manifest.hpp"
#include "capsed/metrics/events.hpp"
#include "capsed/rng.hpp"

namespace capsed {

// Synthetic polyphonic corpus: pink-ish background noise plus per-class
// event prototypes (harmonic tone stack, band-limited noise burst, linear
// chirp) at a fixed event-to-background ratio, with exact ground truth.
struct SynthSpec {
    int n_classes = 3;
    std::vector<std::string> labels;  // defaults derived from prototype kinds
    int n_files = 30;
    double file_len_s = 40.0;
    int sample_rate = 16000;
    int events_per_file_min = 7;
    int events_per_file_max = 11;
    double event_len_min_s = 0.8;
    double event_len_max_s = 2.2;
    // target fraction of event-active frames with >= 2 simultaneous events;
    // 0 disables overlaps entirely
    double overlap_fraction = 0.3;
    double snr_db = 6.0;
    double background_rms = 0.05;
    std::uint64_t seed = 1;
    std::string scene = "synthetic";

    std::vector<std::string> effective_labels() const;
    void validate() const;
    std::string to_json() const;
    static SynthSpec from_json(const std::string& text);
};

// Writes WAV + TSV pairs and the manifest (manifest.tsv) into out_dir;
// per-file derived seeds make generation independent of `jobs`. event_log,
// when given, receives the generator's internal per-file ground truth.
Manifest synthesize_dataset(const SynthSpec& spec, const std::string& out_dir, size_t jobs = 1,
                            std::vector<EventList>* event_log = nullptr);

// One isolated event waveform (unit RMS over its span), for separability
// checks and targeted tests.
std::vector<double> render_event_prototype(int class_idx, int n_classes, double dur_s,
                                           int sample_rate, Rng& rng);

// Pink-ish noise (Voss-McCartney), unit RMS.
std::vector<double> render_background(size_t n_samples, Rng& rng);

// Fraction of event-active frames that carry >= 2 simultaneous events.
double measure_overlap_fraction(const EventRoll& roll);

}  // namespace capsed
