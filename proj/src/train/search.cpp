#include "capsed/train/search.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "capsed/common.hpp"
#include "capsed/model/capsnet.hpp"

namespace capsed {

using nlohmann::json;

std::string SearchSpace::to_json() const {
    json j;
    j["layers"] = {layers_min, layers_max};
    j["kernels"] = {kernels_min, kernels_max};
    j["kernel_dim"] = {kernel_dim_min, kernel_dim_max};
    j["pool"] = {pool_min, pool_max};
    j["dropout"] = {dropout_min, dropout_max};
    j["m"] = {m_min, m_max};
    j["primary_kernel"] = {primary_kernel_min, primary_kernel_max};
    j["j"] = {j_min, j_max};
    j["g"] = {g_min, g_max};
    j["caps_dropout"] = {caps_dropout_min, caps_dropout_max};
    j["routing"] = {routing_min, routing_max};
    j["cnn_mlp_dims"] = cnn_mlp_dims;
    return j.dump(2);
}

SearchSpace SearchSpace::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("search space: invalid JSON: ") + e.what());
    }
    SearchSpace s;
    auto pair = [&](const char* key, auto& lo, auto& hi) {
        if (!j.contains(key)) return;
        lo = j[key].at(0);
        hi = j[key].at(1);
    };
    pair("layers", s.layers_min, s.layers_max);
    pair("kernels", s.kernels_min, s.kernels_max);
    pair("kernel_dim", s.kernel_dim_min, s.kernel_dim_max);
    pair("pool", s.pool_min, s.pool_max);
    pair("dropout", s.dropout_min, s.dropout_max);
    pair("m", s.m_min, s.m_max);
    pair("primary_kernel", s.primary_kernel_min, s.primary_kernel_max);
    pair("j", s.j_min, s.j_max);
    pair("g", s.g_min, s.g_max);
    pair("caps_dropout", s.caps_dropout_min, s.caps_dropout_max);
    pair("routing", s.routing_min, s.routing_max);
    if (j.contains("cnn_mlp_dims")) s.cnn_mlp_dims = j["cnn_mlp_dims"].get<std::vector<index_t>>();
    return s;
}

ModelConfig sample_config(const SearchSpace& space, Rng& rng, const InputConfig& input,
                          index_t k_total, const std::string& head) {
    for (int attempt = 0; attempt < space.max_resample; ++attempt) {
        ModelConfig c;
        c.input = input;
        c.head = head;
        c.detection.k_total = k_total;

        const bool batchnorm = rng.coin();
        const int n_layers =
            static_cast<int>(rng.randint(space.layers_min, space.layers_max));
        const index_t kdim = rng.randint(space.kernel_dim_min, space.kernel_dim_max);
        const bool use_tanh = rng.coin();
        const double block_dropout = rng.uniform(space.dropout_min, space.dropout_max);
        const bool l2 = rng.coin();
        for (int l = 0; l < n_layers; ++l) {
            CnnBlockConfig b;
            b.n_kernels = static_cast<index_t>(
                std::clamp(std::llround(rng.log_uniform(space.kernels_min, space.kernels_max)),
                           static_cast<long long>(space.kernels_min),
                           static_cast<long long>(space.kernels_max)));
            b.kernel_h = b.kernel_w = kdim;
            b.pool_p = rng.randint(space.pool_min, space.pool_max);
            b.activation = use_tanh ? "tanh" : "relu";
            b.dropout = block_dropout;
            b.batchnorm = batchnorm;
            c.blocks.push_back(b);
        }
        c.l2_enabled = l2;

        if (head == "capsule") {
            c.primary.m_caps = rng.randint(space.m_min, space.m_max);
            const index_t pk = rng.randint(space.primary_kernel_min, space.primary_kernel_max);
            c.primary.kernel_h = c.primary.kernel_w = pk;
            c.primary.j_kernels = rng.randint(space.j_min, space.j_max);
            c.detection.g_dim = rng.randint(space.g_min, space.g_max);
            c.primary.dropout = rng.uniform(space.caps_dropout_min, space.caps_dropout_max);
            c.routing.iterations = static_cast<int>(rng.randint(space.routing_min, space.routing_max));
        } else {
            c.mlp_dims = space.cnn_mlp_dims;
        }

        try {
            c.validate();
            return c;
        } catch (const ShapeError&) {
            continue;  // pooling collapsed F, etc.
        }
    }
    throw DataError("sample_config: no valid configuration after " +
                    std::to_string(space.max_resample) + " attempts");
}

std::vector<TrialResult> random_search(
    const SearchSpace& space, const InputConfig& input, index_t k_total, const std::string& head,
    int n_trials, std::uint64_t seed,
    const std::function<double(const ModelConfig&, int)>& evaluate) {
    if (n_trials < 1) throw ShapeError("random_search: n_trials must be >= 1");
    std::vector<TrialResult> trials;
    for (int i = 0; i < n_trials; ++i) {
        Rng rng = Rng::derive(seed, 0x5ea6c500u + static_cast<std::uint64_t>(i));
        TrialResult tr;
        tr.index = i;
        tr.config = sample_config(space, rng, input, k_total, head);
        {
            Rng census_rng(0);
            Model m(tr.config, census_rng);
            tr.n_params = m.param_count();
        }
        try {
            tr.val_er = evaluate(tr.config, i);
        } catch (const std::exception& e) {
            tr.failed = true;
            tr.error = e.what();
        }
        trials.push_back(std::move(tr));
    }
    if (std::all_of(trials.begin(), trials.end(), [](const TrialResult& t) { return t.failed; })) {
        std::string msg = "random_search: every trial failed:";
        for (const auto& t : trials)
            msg += "\n  trial " + std::to_string(t.index) + ": " + t.error;
        throw DataError(msg);
    }
    std::stable_sort(trials.begin(), trials.end(), [](const TrialResult& a, const TrialResult& b) {
        if (a.failed != b.failed) return !a.failed;
        if (a.failed) return a.index < b.index;
        if (a.val_er != b.val_er) return a.val_er < b.val_er;
        if (a.n_params != b.n_params) return a.n_params < b.n_params;
        return a.index < b.index;
    });
    return trials;
}

}  // namespace capsed
