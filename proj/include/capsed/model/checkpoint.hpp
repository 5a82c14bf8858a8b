#pragma once

#include <memory>
#include <string>
#include <vector>

#include "capsed/audio/features.hpp"
#include "capsed/model/capsnet.hpp"

namespace capsed {

// Portable model container: magic "CAPSED01", a JSON text header (model and
// feature configs, class labels, embedded normalization stats, state-tensor
// manifest), then raw little-endian float64 blocks in declaration order
// (parameters, then batch-norm running buffers).
struct CheckpointMeta {
    ModelConfig model;
    FeatureConfig features;
    NormStats norm;
    std::vector<std::string> labels;  // target classes, background excluded
};

void save_checkpoint(const std::string& path, const Model& model, const FeatureConfig& features,
                     const NormStats& norm, const std::vector<std::string>& labels);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::unique_ptr<Model> model;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace capsed
