#include "capsed/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "capsed/common.hpp"
#include "capsed/kernels/kernels.hpp"

namespace capsed {

using nlohmann::json;

std::string TrainReport::to_jsonl() const {
    std::ostringstream os;
    for (const auto& e : epochs) {
        json j{{"type", "epoch"}, {"epoch", e.epoch}, {"train_loss", e.train_loss},
               {"val_er", e.val_er}};
        os << j.dump() << "\n";
    }
    json f{{"type", "final"},
           {"best_epoch", best_epoch},
           {"best_val_er", best_val_er},
           {"stop_reason", stop_reason},
           {"epochs_run", static_cast<int>(epochs.size())},
           {"seed", seed}};
    os << f.dump() << "\n";
    return os.str();
}

Tensor binarize(const Tensor& probs, double threshold) {
    Tensor out(probs.shape());
    for (index_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1.0 : 0.0;
    return out;
}

Tensor window_targets(const EventRoll& file_roll, index_t start_frame, index_t context_t,
                      bool with_background) {
    const index_t k = file_roll.n_classes();
    const index_t cols = with_background ? k + 1 : k;
    Tensor out = Tensor::zeros({context_t, cols});
    for (index_t t = 0; t < context_t; ++t) {
        const index_t src = start_frame + t;
        bool any = false;
        if (src < file_roll.n_frames()) {
            for (index_t c = 0; c < k; ++c) {
                const double v = file_roll.activity.at(src, c);
                out.at(t, c) = v;
                any = any || v != 0.0;
            }
        }
        if (with_background) out.at(t, k) = any ? 0.0 : 1.0;
    }
    return out;
}

Tensor predict_probs_file(Model& model, const std::vector<FeatureWindow>& windows,
                          index_t n_frames) {
    const index_t k = model.config().detection.k_total - 1;
    Tensor probs = Tensor::zeros({n_frames, k});
    const bool persistent = model.config().routing.mode == "persistent";
    Rng rng(0);  // inference path draws nothing
    Tensor beta;
    for (const FeatureWindow& w : windows) {
        Tape tape;
        const Tensor* carry = (persistent && !beta.empty()) ? &beta : nullptr;
        Model::Forward fwd = model.forward(tape, w.values, /*train=*/false, rng, carry);
        if (persistent) beta = fwd.beta_out;
        const index_t rows = std::min(w.valid_frames, n_frames - w.start_frame);
        for (index_t t = 0; t < rows; ++t)
            for (index_t c = 0; c < k; ++c)
                probs.at(w.start_frame + t, c) = fwd.probs.at(t, c);
    }
    return probs;
}

double evaluate_segment_er(Model& model, const std::vector<EvalFile>& files, double threshold) {
    ErrorStats acc;
    for (const EvalFile& f : files) {
        Tensor probs = predict_probs_file(model, f.windows, f.n_frames);
        EventRoll hyp;
        hyp.activity = binarize(probs, threshold);
        hyp.frame_hop = f.reference.frame_hop;
        hyp.labels = f.reference.labels;
        acc += segment_stats(f.reference, hyp);
    }
    const ErScore score = score_from_stats(acc);
    return score.er;
}

ValMetricFn make_segment_er_metric(const std::vector<EvalFile>& val_files, double threshold) {
    return [&val_files, threshold](Model& model, int) {
        return evaluate_segment_er(model, val_files, threshold);
    };
}

TrainReport train_model(Model& model, std::vector<TrainWindow> train_windows,
                        const ValMetricFn& val_metric, const OptimizerConfig& opt,
                        std::uint64_t seed) {
    opt.validate();
    if (train_windows.empty()) throw DataError("train: empty training set");
    const bool capsule_head = model.config().head == "capsule";
    const index_t t_frames = model.config().input.t_frames;
    const index_t k_total = model.config().detection.k_total;
    for (auto& w : train_windows) {
        if (w.values.dim(0) != t_frames)
            throw DataError("train: window length does not match model input");
        if (w.targets.dim(0) != t_frames)
            throw DataError("train: targets not aligned to window frames");
        if (capsule_head && w.targets.dim(1) == k_total - 1) {
            // append the background column: 1 iff no target class active
            Tensor aug = Tensor::zeros({t_frames, k_total});
            for (index_t t = 0; t < t_frames; ++t) {
                bool any = false;
                for (index_t c = 0; c < k_total - 1; ++c) {
                    aug.at(t, c) = w.targets.at(t, c);
                    any = any || w.targets.at(t, c) != 0.0;
                }
                aug.at(t, k_total - 1) = any ? 0.0 : 1.0;
            }
            w.targets = std::move(aug);
        }
        const index_t want = capsule_head ? k_total : k_total - 1;
        if (w.targets.dim(1) != want)
            throw DataError("train: target class count does not match the model head");
    }

    const auto t_start = std::chrono::steady_clock::now();
    auto params = model.parameters();
    AdaDelta optimizer(params, opt);
    const double l2_lambda = model.config().l2_enabled ? model.config().l2_lambda : 0.0;
    auto l2_params = model.l2_parameters();

    TrainReport report;
    report.seed = seed;
    double best_er = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_state = model.state();
    int best_epoch = 0;
    int since_improvement = 0;
    std::uint64_t draw_counter = 0;

    std::vector<size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
        Rng shuffle_rng = Rng::derive(seed, 0x10000u + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        index_t n_batches = 0;
        for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(opt.batch_size)) {
            const size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(opt.batch_size));
            const double inv_b = 1.0 / static_cast<double>(b1 - b0);
            for (Parameter* p : params) p->zero_grad();

            double batch_loss = 0.0;
            for (size_t bi = b0; bi < b1; ++bi) {
                const TrainWindow& w = train_windows[order[bi]];
                Rng member_rng = Rng::derive(seed, 0x20000000u + draw_counter++);
                Tape tape;
                Model::Forward fwd = model.forward(tape, w.values, /*train=*/true, member_rng);
                Var loss = capsule_head
                               ? ops::margin_loss_from_norms(fwd.head_out, w.targets,
                                                             w.valid_frames)
                               : ops::bce_with_logits(fwd.head_out, w.targets, w.valid_frames);
                batch_loss += loss.value()[0] * inv_b;
                Var scaled = ops::scalar_mul(loss, inv_b);
                tape.backward(scaled);
            }
            if (l2_lambda > 0.0) {
                double l2_val = 0.0;
                const auto& ks = kernels::active();
                for (Parameter* p : l2_params) {
                    l2_val += ks.sumsq(p->value.data(), static_cast<size_t>(p->value.size()));
                    ks.axpy(2.0 * l2_lambda, p->value.data(), p->grad.data(),
                            static_cast<size_t>(p->value.size()));
                }
                batch_loss += l2_lambda * l2_val;
            }
            optimizer.step();
            epoch_loss += batch_loss;
            ++n_batches;
        }
        epoch_loss /= static_cast<double>(n_batches);

        const double val_er = val_metric(model, epoch);
        report.epochs.push_back({epoch, epoch_loss, val_er});

        if (val_er < best_er) {
            best_er = val_er;
            best_epoch = epoch;
            best_state = model.state();
            since_improvement = 0;
        } else {
            ++since_improvement;
        }
        if (since_improvement >= opt.patience) {
            report.stop_reason = "patience";
            break;
        }
    }
    if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
    report.best_epoch = best_epoch;
    report.best_val_er = best_er;
    model.load_state(best_state);

    report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

}  // namespace capsed
