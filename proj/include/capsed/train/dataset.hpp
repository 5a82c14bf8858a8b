#pragma once

#include <string>
#include <vector>

#include "capsed/audio/features.hpp"
#include "capsed/data/manifest.hpp"
#include "capsed/train/trainer.hpp"

namespace capsed {

// Feature extraction + normalization + windowing for a manifest split.
// Normalization statistics are fitted on the training entries only.
struct PreparedData {
    std::vector<std::string> labels;  // sorted; background excluded
    NormStats norm;
    std::vector<TrainWindow> train_windows;  // class targets [T,K]
    std::vector<EvalFile> val_files;
    std::vector<EvalFile> test_files;
};

// Entries with fold == val_fold go to validation, fold == test_fold to test
// (pass -1 for none), the rest to training. train_window_hop <= 0 means
// non-overlapping training windows.
PreparedData prepare_data(const Manifest& manifest, const FeatureConfig& feat, int val_fold,
                          int test_fold, index_t train_window_hop);

}  // namespace capsed
