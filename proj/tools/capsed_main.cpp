// capsed: capsule-network polyphonic sound event detection toolkit.
// Subcommands: synth, features, train, predict, evaluate, search, inspect.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "capsed/audio/features.hpp"
#include "capsed/audio/wav.hpp"
#include "capsed/common.hpp"
#include "capsed/data/manifest.hpp"
#include "capsed/data/synth.hpp"
#include "capsed/metrics/error_rate.hpp"
#include "capsed/metrics/events.hpp"
#include "capsed/model/capsnet.hpp"
#include "capsed/model/checkpoint.hpp"
#include "capsed/train/dataset.hpp"
#include "capsed/train/search.hpp"
#include "capsed/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace capsed;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << content;
    if (!out) throw DataError(path + ": write failed");
}

// Falls back to $CAPSED_DATA_DIR/<path> when the path does not exist as given.
std::string resolve_input(const std::string& path) {
    if (fs::exists(path)) return path;
    if (const char* base = std::getenv("CAPSED_DATA_DIR")) {
        const std::string alt = (fs::path(base) / path).string();
        if (fs::exists(alt)) return alt;
    }
    return path;
}

struct TrainConfigBundle {
    FeatureConfig features;
    OptimizerConfig optimizer;
    json model_section;  // may be partial or null
    index_t window_hop = 0;
    double threshold = 0.5;
};

TrainConfigBundle parse_train_config(const std::string& path) {
    TrainConfigBundle b;
    if (path.empty()) return b;
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path + ": invalid JSON: " + e.what());
    }
    if (j.contains("features")) b.features = FeatureConfig::from_json(j["features"].dump());
    if (j.contains("optimizer")) {
        const json& o = j["optimizer"];
        b.optimizer.lr = o.value("lr", 1.0);
        b.optimizer.rho = o.value("rho", 0.95);
        b.optimizer.eps = o.value("eps", 1e-6);
        b.optimizer.batch_size = o.value("batch_size", 20);
        b.optimizer.max_epochs = o.value("max_epochs", 100);
        b.optimizer.patience = o.value("patience", 20);
    }
    if (j.contains("model")) b.model_section = j["model"];
    if (j.contains("train")) {
        b.window_hop = j["train"].value("window_hop", index_t{0});
        b.threshold = j["train"].value("threshold", 0.5);
    }
    return b;
}

// Completes a possibly-partial model section with the data-derived input
// geometry and class count.
ModelConfig build_model_config(const json& section, const FeatureConfig& feat, index_t k_total,
                               const std::string& head) {
    json j = section.is_null() ? json::object() : section;
    if (!j.contains("blocks")) {
        j["blocks"] = json::array();
        for (int i = 0; i < 2; ++i)
            j["blocks"].push_back({{"n_kernels", 8},
                                   {"kernel_h", 3},
                                   {"kernel_w", 3},
                                   {"pool", 2},
                                   {"activation", "relu"},
                                   {"dropout", 0.2},
                                   {"batchnorm", false}});
    }
    j["input"] = {{"t", feat.context_t}, {"f", feat.feature_dim()}, {"channels", feat.channels}};
    if (!j.contains("detection")) j["detection"] = json::object();
    j["detection"]["k_total"] = k_total;
    if (!j["detection"].contains("g")) j["detection"]["g"] = 8;
    if (!j.contains("primary"))
        j["primary"] = {{"m", 4}, {"kernel_h", 3}, {"kernel_w", 3}, {"j", 4}, {"dropout", 0.0}};
    j["head"] = head;
    if (head == "cnn" && !j.contains("mlp_dims")) j["mlp_dims"] = {64};
    ModelConfig cfg = ModelConfig::from_json(j.dump());
    cfg.validate();
    return cfg;
}

void dump_probs(const std::string& path, const Tensor& probs,
                const std::vector<std::string>& labels, double frame_hop) {
    std::ostringstream os;
    os << "# frame\ttime";
    for (const auto& l : labels) os << "\t" << l;
    os << "\n";
    char buf[64];
    for (index_t t = 0; t < probs.dim(0); ++t) {
        std::snprintf(buf, sizeof(buf), "%lld\t%.6f", static_cast<long long>(t),
                      static_cast<double>(t) * frame_hop);
        os << buf;
        for (index_t k = 0; k < probs.dim(1); ++k) {
            std::snprintf(buf, sizeof(buf), "\t%.9f", probs.at(t, k));
            os << buf;
        }
        os << "\n";
    }
    write_file(path, os.str());
}

// ---------------------------------------------------------------- evaluate

struct ScenePair {
    std::string stem;
    std::string scene;
    EventList ref, hyp;
};

int cmd_evaluate(const std::string& ref_dir, const std::string& hyp_dir, const std::string& mode,
                 const std::string& scenes_manifest, double segment_len, double collar,
                 const std::string& out_path, size_t jobs) {
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(resolve_input(ref_dir)))
        if (e.path().extension() == ".tsv" && e.path().filename() != "manifest.tsv")
            stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw DataError(ref_dir + ": no .tsv reference files");

    std::map<std::string, std::string> scene_of;
    if (!scenes_manifest.empty()) {
        const Manifest m = load_manifest(resolve_input(scenes_manifest), false);
        for (const auto& e : m.entries)
            scene_of[fs::path(e.annotation).stem().string()] = e.scene;
    }

    std::vector<ScenePair> pairs(stems.size());
    std::set<std::string> label_set;
    for (size_t i = 0; i < stems.size(); ++i) {
        pairs[i].stem = stems[i];
        pairs[i].scene = scene_of.count(stems[i]) ? scene_of[stems[i]] : "all";
        pairs[i].ref = parse_annotations(
            (fs::path(resolve_input(ref_dir)) / (stems[i] + ".tsv")).string());
        const fs::path hyp_path = fs::path(resolve_input(hyp_dir)) / (stems[i] + ".tsv");
        if (!fs::exists(hyp_path))
            throw DataError(hyp_path.string() + ": missing hypothesis for " + stems[i]);
        pairs[i].hyp = parse_annotations(hyp_path.string());
        for (const auto& ev : pairs[i].ref) label_set.insert(ev.label);
        for (const auto& ev : pairs[i].hyp) label_set.insert(ev.label);
    }
    const std::vector<std::string> labels(label_set.begin(), label_set.end());

    constexpr double hop = 0.02;
    std::vector<ErrorStats> per_file(pairs.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= pairs.size()) return;
            if (mode == "segment") {
                double end = segment_len;
                for (const auto& ev : pairs[i].ref) end = std::max(end, ev.offset);
                for (const auto& ev : pairs[i].hyp) end = std::max(end, ev.offset);
                const index_t n_frames = static_cast<index_t>(std::ceil(end / hop));
                const EventRoll r = roll_from_events(pairs[i].ref, hop, n_frames, labels);
                const EventRoll h = roll_from_events(pairs[i].hyp, hop, n_frames, labels);
                per_file[i] = segment_stats(r, h, segment_len);
            } else {
                per_file[i] = event_onset_stats(pairs[i].ref, pairs[i].hyp, collar);
            }
        }
    };
    const size_t n_workers = std::max<size_t>(1, std::min(jobs, pairs.size()));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    // deterministic reduction: scene order sorted, file order by index
    std::map<std::string, ErrorStats> by_scene;
    for (size_t i = 0; i < pairs.size(); ++i) by_scene[pairs[i].scene] += per_file[i];

    std::ostringstream os;
    char buf[160];
    os << "mode " << mode << "\n";
    double er_sum = 0.0;
    for (const auto& [scene, stats] : by_scene) {
        const ErScore s = score_from_stats(stats);
        std::snprintf(buf, sizeof(buf), "scene %s ER %.6f S %lld I %lld D %lld N %lld%s\n",
                      scene.c_str(), s.er, static_cast<long long>(stats.substitutions),
                      static_cast<long long>(stats.insertions),
                      static_cast<long long>(stats.deletions), static_cast<long long>(stats.n_ref),
                      s.defined ? "" : " (N=0, undefined)");
        os << buf;
        er_sum += s.er;
    }
    std::snprintf(buf, sizeof(buf), "average ER %.6f over %zu scene(s)\n",
                  er_sum / static_cast<double>(by_scene.size()), by_scene.size());
    os << buf;
    if (out_path.empty())
        std::cout << os.str();
    else
        write_file(out_path, os.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capsed: capsule-network polyphonic sound event detection"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    size_t jobs = 1;
    app.add_option("--seed", seed, "master RNG seed")->capture_default_str();
    app.add_option("--jobs", jobs, "worker threads for synth/evaluate")->capture_default_str();

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic polyphonic dataset");
    std::string synth_spec_path, synth_out;
    synth->add_option("--spec", synth_spec_path, "synthesis spec JSON (defaults if omitted)");
    synth->add_option("--out", synth_out, "output directory")->required();

    // features
    auto* features = app.add_subcommand("features", "fit normalization stats / dump features");
    std::string feat_manifest, feat_config, feat_out, feat_folds, dump_audio, dump_out;
    features->add_option("--manifest", feat_manifest, "dataset manifest");
    features->add_option("--config", feat_config, "feature config JSON");
    features->add_option("--out", feat_out, "output NormStats file");
    features->add_option("--folds", feat_folds, "comma-separated folds to fit on (default all)");
    features->add_option("--dump-audio", dump_audio, "dump the feature matrix of one WAV");
    features->add_option("--dump-out", dump_out, "path for the feature dump (TSV)");

    // train
    auto* train = app.add_subcommand("train", "train a model on a manifest");
    std::string train_manifest, train_config, train_out, train_report, train_routing = "reset",
                train_head = "capsule";
    int val_fold = 0, test_fold = -1;
    train->add_option("--manifest", train_manifest, "dataset manifest")->required();
    train->add_option("--config", train_config, "training config JSON");
    train->add_option("--out", train_out, "output checkpoint")->required();
    train->add_option("--report", train_report, "training report (JSON lines)");
    train->add_option("--routing", train_routing, "routing variant: reset | persistent")
        ->check(CLI::IsMember({"reset", "persistent"}));
    train->add_option("--head", train_head, "model head: capsule | cnn")
        ->check(CLI::IsMember({"capsule", "cnn"}));
    train->add_option("--val-fold", val_fold, "validation fold")->capture_default_str();
    train->add_option("--test-fold", test_fold, "held-out fold (excluded from training)")
        ->capture_default_str();

    // predict
    auto* predict = app.add_subcommand("predict", "predict events for an audio file");
    std::string pred_model, pred_audio, pred_out, pred_probs;
    double pred_threshold = 0.5;
    predict->add_option("--model", pred_model, "checkpoint")->required();
    predict->add_option("--audio", pred_audio, "input WAV")->required();
    predict->add_option("--out", pred_out, "output events TSV")->required();
    predict->add_option("--probs", pred_probs, "per-frame probability dump (TSV)");
    predict->add_option("--threshold", pred_threshold, "decision threshold")
        ->capture_default_str();

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "score hypotheses against references");
    std::string eval_ref, eval_hyp, eval_mode = "segment", eval_scenes, eval_out;
    double eval_segment_len = 1.0, eval_collar = 0.5;
    evaluate->add_option("--ref", eval_ref, "reference annotation directory")->required();
    evaluate->add_option("--hyp", eval_hyp, "hypothesis annotation directory")->required();
    evaluate->add_option("--mode", eval_mode, "segment | event")
        ->check(CLI::IsMember({"segment", "event"}));
    evaluate->add_option("--scenes", eval_scenes, "manifest giving per-file scene tags");
    evaluate->add_option("--segment-len", eval_segment_len, "segment length in seconds")
        ->capture_default_str();
    evaluate->add_option("--collar", eval_collar, "onset collar in seconds")
        ->capture_default_str();
    evaluate->add_option("--out", eval_out, "write the report here instead of stdout");

    // search
    auto* search = app.add_subcommand("search", "random hyperparameter search");
    std::string search_manifest, search_config, search_space_path, search_out,
        search_head = "capsule";
    int search_trials = 10, search_budget = 10, search_patience = 5, search_val_fold = 0,
        search_test_fold = -1;
    search->add_option("--manifest", search_manifest, "dataset manifest")->required();
    search->add_option("--config", search_config, "base training config JSON");
    search->add_option("--space", search_space_path, "search space JSON");
    search->add_option("--out", search_out, "output directory")->required();
    search->add_option("--trials", search_trials, "number of trials")->capture_default_str();
    search->add_option("--budget-epochs", search_budget, "max epochs per trial")
        ->capture_default_str();
    search->add_option("--patience", search_patience, "early-stopping patience per trial")
        ->capture_default_str();
    search->add_option("--head", search_head, "model head: capsule | cnn")
        ->check(CLI::IsMember({"capsule", "cnn"}));
    search->add_option("--val-fold", search_val_fold, "validation fold")->capture_default_str();
    search->add_option("--test-fold", search_test_fold, "held-out fold")->capture_default_str();

    // inspect
    auto* inspect = app.add_subcommand("inspect", "show checkpoint or preset details");
    std::string inspect_model, inspect_preset;
    inspect->add_option("--model", inspect_model, "checkpoint to inspect");
    inspect->add_option("--preset", inspect_preset, "built-in preset: home | street");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) {
            SynthSpec spec;
            if (!synth_spec_path.empty())
                spec = SynthSpec::from_json(read_file(resolve_input(synth_spec_path)));
            if (app.count("--seed")) spec.seed = seed;
            const Manifest m = synthesize_dataset(spec, synth_out, jobs);
            // summary from the emitted ground truth
            const auto labels = spec.effective_labels();
            ErrorStats dummy;
            index_t active = 0, overlapped = 0;
            for (size_t i = 0; i < m.entries.size(); ++i) {
                const EventList ev = parse_annotations(m.annotation_path(i), labels);
                const index_t frames = static_cast<index_t>(spec.file_len_s / 0.02);
                const EventRoll roll = roll_from_events(ev, 0.02, frames, labels);
                for (index_t t = 0; t < roll.n_frames(); ++t) {
                    int n = 0;
                    for (index_t k = 0; k < roll.n_classes(); ++k)
                        if (roll.activity.at(t, k) != 0.0) ++n;
                    if (n >= 1) ++active;
                    if (n >= 2) ++overlapped;
                }
            }
            (void)dummy;
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "synth: %d files, %.1f s each, %d classes, overlap %.3f\n", spec.n_files,
                          spec.file_len_s, spec.n_classes,
                          active ? static_cast<double>(overlapped) / static_cast<double>(active)
                                 : 0.0);
            std::cout << buf;
            return 0;
        }

        if (*features) {
            FeatureConfig feat;
            if (!feat_config.empty())
                feat = FeatureConfig::from_json(read_file(resolve_input(feat_config)));
            if (!dump_audio.empty()) {
                if (dump_out.empty()) throw UsageError("--dump-audio requires --dump-out");
                const WavData wav = load_wav(resolve_input(dump_audio));
                const Tensor mat = extract_features(wav, feat);
                std::ostringstream os;
                char buf[40];
                for (index_t t = 0; t < mat.dim(0); ++t) {
                    for (index_t f = 0; f < mat.dim(1); ++f)
                        for (index_t c = 0; c < mat.dim(2); ++c) {
                            std::snprintf(buf, sizeof(buf), "%s%.9f",
                                          (f == 0 && c == 0) ? "" : "\t", mat.at(t, f, c));
                            os << buf;
                        }
                    os << "\n";
                }
                write_file(dump_out, os.str());
            }
            if (!feat_manifest.empty()) {
                if (feat_out.empty()) throw UsageError("--manifest requires --out for the stats");
                const Manifest m = load_manifest(resolve_input(feat_manifest));
                std::set<int> folds;
                if (!feat_folds.empty()) {
                    std::istringstream fs_in(feat_folds);
                    std::string tok;
                    while (std::getline(fs_in, tok, ',')) folds.insert(std::stoi(tok));
                }
                std::vector<Tensor> mats;
                for (size_t i = 0; i < m.entries.size(); ++i) {
                    if (!folds.empty() && !folds.count(m.entries[i].fold)) continue;
                    mats.push_back(extract_features(load_wav(m.audio_path(i)), feat));
                }
                const NormStats stats = fit_norm(mats);
                for (index_t b : stats.floored_bins)
                    std::cerr << "warning: constant bin " << b << ", std floored at 1e-8\n";
                save_norm_stats(feat_out, stats);
                std::cout << "features: fitted " << stats.mean.dim(0) << "x" << stats.mean.dim(1)
                          << " stats from " << mats.size() << " file(s)\n";
            }
            if (feat_manifest.empty() && dump_audio.empty())
                throw UsageError("features: give --manifest and/or --dump-audio");
            return 0;
        }

        if (*train) {
            TrainConfigBundle cfg = parse_train_config(
                train_config.empty() ? "" : resolve_input(train_config));
            const Manifest m = load_manifest(resolve_input(train_manifest));
            PreparedData data =
                prepare_data(m, cfg.features, val_fold, test_fold, cfg.window_hop);
            for (index_t b : data.norm.floored_bins)
                std::cerr << "warning: constant bin " << b << ", std floored at 1e-8\n";
            const index_t k_total = static_cast<index_t>(data.labels.size()) + 1;
            ModelConfig mc = build_model_config(cfg.model_section, cfg.features, k_total,
                                                train_head);
            mc.routing.mode = train_routing;
            Rng init_rng = Rng::derive(seed, 0xC0DEu);
            Model model(mc, init_rng);
            std::cerr << "train: " << model.param_count() << " trainable parameters, "
                      << data.train_windows.size() << " training windows\n";
            const ValMetricFn metric = make_segment_er_metric(data.val_files, cfg.threshold);
            const TrainReport report =
                train_model(model, data.train_windows, metric, cfg.optimizer, seed);
            save_checkpoint(train_out, model, cfg.features, data.norm, data.labels);
            if (!train_report.empty()) write_file(train_report, report.to_jsonl());
            std::cerr << "train: wall time " << report.wall_time_s << " s\n";
            char buf[120];
            std::snprintf(buf, sizeof(buf), "train: best epoch %d val ER %.6f (%s)\n",
                          report.best_epoch, report.best_val_er, report.stop_reason.c_str());
            std::cout << buf;
            return 0;
        }

        if (*predict) {
            LoadedCheckpoint ckpt = load_checkpoint(resolve_input(pred_model));
            const WavData wav = load_wav(resolve_input(pred_audio));
            Tensor mat = extract_features(wav, ckpt.meta.features);
            if (!ckpt.meta.norm.empty()) mat = apply_norm(mat, ckpt.meta.norm);
            const auto windows =
                window_stream(mat, ckpt.meta.features.context_t, 0, pred_audio);
            const Tensor probs = predict_probs_file(*ckpt.model, windows, mat.dim(0));
            EventRoll roll;
            roll.activity = binarize(probs, pred_threshold);
            roll.frame_hop = ckpt.meta.features.frame_hop_s();
            roll.labels = ckpt.meta.labels;
            write_annotations(pred_out, events_from_roll(roll));
            if (!pred_probs.empty())
                dump_probs(pred_probs, probs, ckpt.meta.labels, roll.frame_hop);
            return 0;
        }

        if (*evaluate)
            return cmd_evaluate(eval_ref, eval_hyp, eval_mode, eval_scenes, eval_segment_len,
                                eval_collar, eval_out, jobs);

        if (*search) {
            TrainConfigBundle cfg = parse_train_config(
                search_config.empty() ? "" : resolve_input(search_config));
            cfg.optimizer.max_epochs = search_budget;
            cfg.optimizer.patience = std::min(search_patience, search_budget);
            SearchSpace space;
            if (!search_space_path.empty())
                space = SearchSpace::from_json(read_file(resolve_input(search_space_path)));
            const Manifest m = load_manifest(resolve_input(search_manifest));
            PreparedData data = prepare_data(m, cfg.features, search_val_fold, search_test_fold,
                                             cfg.window_hop);
            const index_t k_total = static_cast<index_t>(data.labels.size()) + 1;
            const InputConfig input{cfg.features.context_t, cfg.features.feature_dim(),
                                    cfg.features.channels};

            fs::create_directories(search_out);
            const auto trials = random_search(
                space, input, k_total, search_head, search_trials, seed,
                [&](const ModelConfig& trial_cfg, int trial_idx) {
                    Rng init_rng = Rng::derive(seed, 0x7e57a000u + trial_idx);
                    Model model(trial_cfg, init_rng);
                    const ValMetricFn metric =
                        make_segment_er_metric(data.val_files, cfg.threshold);
                    auto windows = data.train_windows;
                    const TrainReport rep = train_model(model, std::move(windows), metric,
                                                        cfg.optimizer, seed + trial_idx);
                    std::cerr << "trial " << trial_idx << ": val ER " << rep.best_val_er
                              << " (epoch " << rep.best_epoch << ")\n";
                    return rep.best_val_er;
                });

            std::ostringstream table;
            table << "# rank\ttrial\tval_er\tn_params\tconfig\n";
            char buf[64];
            for (size_t r = 0; r < trials.size(); ++r) {
                const auto& t = trials[r];
                json cj = json::parse(t.config.to_json());
                if (t.failed)
                    table << r << "\t" << t.index << "\tFAILED\t" << t.n_params << "\t" << t.error
                          << "\n";
                else {
                    std::snprintf(buf, sizeof(buf), "%.6f", t.val_er);
                    table << r << "\t" << t.index << "\t" << buf << "\t" << t.n_params << "\t"
                          << cj.dump() << "\n";
                }
            }
            write_file((fs::path(search_out) / "trials.tsv").string(), table.str());
            write_file((fs::path(search_out) / "best_config.json").string(),
                       trials.front().config.to_json() + "\n");
            std::snprintf(buf, sizeof(buf), "search: best val ER %.6f (trial %d)\n",
                          trials.front().val_er, trials.front().index);
            std::cout << buf;
            return 0;
        }

        if (*inspect) {
            if (!inspect_preset.empty()) {
                const ModelConfig cfg = ModelConfig::preset(inspect_preset);
                Rng rng(0);
                const Model model(cfg, rng);
                std::cout << "preset " << inspect_preset << "\n" << cfg.to_json() << "\n";
                for (const auto& e : model.census()) {
                    std::cout << e.name << " [";
                    for (size_t i = 0; i < e.shape.size(); ++i)
                        std::cout << (i ? "," : "") << e.shape[i];
                    std::cout << "] " << e.count << "\n";
                }
                std::cout << "total trainable parameters " << model.param_count() << "\n";
                return 0;
            }
            if (inspect_model.empty()) throw UsageError("inspect: give --model or --preset");
            LoadedCheckpoint ckpt = load_checkpoint(resolve_input(inspect_model));
            std::cout << "model config:\n" << ckpt.meta.model.to_json() << "\n";
            std::cout << "feature config:\n" << ckpt.meta.features.to_json() << "\n";
            std::cout << "labels:";
            for (const auto& l : ckpt.meta.labels) std::cout << " " << l;
            std::cout << "\nrouting mode: " << ckpt.meta.model.routing.mode << "\n";
            for (const auto& e : ckpt.model->census()) {
                std::cout << e.name << " [";
                for (size_t i = 0; i < e.shape.size(); ++i)
                    std::cout << (i ? "," : "") << e.shape[i];
                std::cout << "] " << e.count << "\n";
            }
            std::cout << "total trainable parameters " << ckpt.model->param_count() << "\n";
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
