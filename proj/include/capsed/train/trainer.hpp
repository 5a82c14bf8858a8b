#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capsed/audio/features.hpp"
#include "capsed/metrics/error_rate.hpp"
#include "capsed/model/capsnet.hpp"
#include "capsed/train/adadelta.hpp"

namespace capsed {

// One training example: a normalized feature window plus frame targets.
struct TrainWindow {
    Tensor values;          // [T,F,C]
    Tensor targets;         // capsule head: [T,K_total] incl. background (last);
                            // cnn head: [T,K]
    index_t valid_frames = 0;
};

// Validation/test file: ordered non-overlapping windows plus the reference
// roll (target classes only, no background).
struct EvalFile {
    std::vector<FeatureWindow> windows;
    EventRoll reference;
    index_t n_frames = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_er = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_val_er = 0.0;
    std::string stop_reason;  // "patience" | "max_epochs"
    std::uint64_t seed = 0;
    double wall_time_s = 0.0;  // not part of the serialized report

    std::string to_jsonl() const;  // deterministic (no wall time)
};

// Validation metric hook, called after each epoch; returns the quantity
// minimized by early stopping (segment ER in production).
using ValMetricFn = std::function<double(Model&, int epoch)>;

// AdaDelta training with early stopping on the validation metric. Restores
// the best-metric state into the model before returning ("last saved model").
TrainReport train_model(Model& model, std::vector<TrainWindow> train_windows,
                        const ValMetricFn& val_metric, const OptimizerConfig& opt,
                        std::uint64_t seed);

// Per-frame probabilities for one file from ordered non-overlapping windows;
// padded frames are discarded. Routing mode follows the model config
// (persistent mode carries beta across the file's windows).
Tensor predict_probs_file(Model& model, const std::vector<FeatureWindow>& windows,
                          index_t n_frames);

// probs >= threshold -> 1
Tensor binarize(const Tensor& probs, double threshold = 0.5);

// Thresholded segment-based ER over a set of files (statistics accumulated,
// then divided once).
double evaluate_segment_er(Model& model, const std::vector<EvalFile>& files, double threshold);

ValMetricFn make_segment_er_metric(const std::vector<EvalFile>& val_files, double threshold);

// Frame targets for one window of a file roll. with_background appends the
// background column (1 iff no target class active in the frame).
Tensor window_targets(const EventRoll& file_roll, index_t start_frame, index_t context_t,
                      bool with_background);

}  // namespace capsed
