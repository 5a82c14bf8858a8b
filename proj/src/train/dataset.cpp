#include "capsed/train/dataset.hpp"

#include "capsed/common.hpp"

namespace capsed {

PreparedData prepare_data(const Manifest& manifest, const FeatureConfig& feat, int val_fold,
                          int test_fold, index_t train_window_hop) {
    if (manifest.entries.empty()) throw DataError("prepare_data: empty manifest");
    feat.validate();

    PreparedData out;
    out.labels = collect_labels(manifest);
    if (out.labels.empty()) throw DataError("prepare_data: no labels in any annotation file");
    const index_t k = static_cast<index_t>(out.labels.size());

    struct FileData {
        Tensor features;  // raw, pre-normalization
        EventRoll roll;
        int fold;
        std::string id;
    };
    std::vector<FileData> files;
    std::vector<Tensor> train_feats;
    bool have_train = false, have_val = false;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        const auto& e = manifest.entries[i];
        FileData fd;
        fd.fold = e.fold;
        fd.id = e.audio;
        const WavData wav = load_wav(manifest.audio_path(i));
        fd.features = extract_features(wav, feat);
        const EventList events = parse_annotations(manifest.annotation_path(i), out.labels);
        fd.roll = roll_from_events(events, feat.frame_hop_s(), fd.features.dim(0), out.labels);
        if (e.fold != val_fold && e.fold != test_fold) {
            train_feats.push_back(fd.features);
            have_train = true;
        }
        if (e.fold == val_fold) have_val = true;
        files.push_back(std::move(fd));
    }
    if (!have_train) throw DataError("prepare_data: no training entries (check fold assignment)");
    if (!have_val) throw DataError("prepare_data: validation fold " + std::to_string(val_fold) +
                                   " is empty");
    out.norm = fit_norm(train_feats);
    train_feats.clear();

    for (auto& fd : files) {
        const Tensor normed = apply_norm(fd.features, out.norm);
        if (fd.fold == val_fold || fd.fold == test_fold) {
            EvalFile ef;
            ef.windows = window_stream(normed, feat.context_t, 0, fd.id);
            ef.reference = fd.roll;
            ef.n_frames = normed.dim(0);
            (fd.fold == val_fold ? out.val_files : out.test_files).push_back(std::move(ef));
        } else {
            const auto windows = window_stream(normed, feat.context_t, train_window_hop, fd.id);
            for (const auto& w : windows) {
                TrainWindow tw;
                tw.values = w.values;
                tw.valid_frames = w.valid_frames;
                tw.targets = window_targets(fd.roll, w.start_frame, feat.context_t,
                                            /*with_background=*/false);
                if (tw.targets.dim(1) != k) throw DataError("prepare_data: target width mismatch");
                out.train_windows.push_back(std::move(tw));
            }
        }
    }
    if (out.train_windows.empty()) throw DataError("prepare_data: no training windows produced");
    return out;
}

}  // namespace capsed
