#include "capsed/model/config.hpp"

#include <json.hpp>

namespace capsed {

using nlohmann::json;

index_t ModelConfig::f_prime() const {
    index_t f = input.f_bins;
    for (const auto& b : blocks) f /= b.pool_p;
    return f;
}

void ModelConfig::validate() const {
    if (input.t_frames < 1 || input.f_bins < 1) throw ShapeError("config: input dims must be >= 1");
    if (input.channels != 1 && input.channels != 2)
        throw ShapeError("config: channels must be 1 or 2");
    if (blocks.empty()) throw ShapeError("config: at least one CNN block required");
    index_t f = input.f_bins;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (b.n_kernels < 1) throw ShapeError("config: block kernels must be >= 1");
        if (b.kernel_h < 1 || b.kernel_w < 1) throw ShapeError("config: kernel dims must be >= 1");
        if (b.pool_p < 1) throw ShapeError("config: pool must be >= 1");
        if (b.activation != "relu" && b.activation != "tanh")
            throw ShapeError("config: unknown activation '" + b.activation + "'");
        if (b.dropout < 0.0 || b.dropout >= 1.0) throw ShapeError("config: dropout in [0,1)");
        if (b.pool_p > f)
            throw ShapeError("config: block " + std::to_string(i) + " pool " +
                             std::to_string(b.pool_p) + " collapses F=" + std::to_string(f) +
                             " below 1");
        f /= b.pool_p;
    }
    if (f < 1) throw ShapeError("config: frequency axis collapsed below 1 by pooling");
    if (head == "capsule") {
        if (primary.m_caps < 2 || primary.j_kernels < 2)
            throw ShapeError("config: M and J must be >= 2");
        if (detection.g_dim < 2) throw ShapeError("config: G must be >= 2");
        if (detection.k_total < 2) throw ShapeError("config: K_total must be >= 2");
        if (primary.kernel_h < 1 || primary.kernel_w < 1)
            throw ShapeError("config: primary kernel dims must be >= 1");
        if (primary.dropout < 0.0 || primary.dropout >= 1.0)
            throw ShapeError("config: capsule dropout in [0,1)");
        if (routing.iterations < 1 || routing.iterations > 5)
            throw ShapeError("config: routing iterations must be in 1..5");
        if (routing.mode != "reset" && routing.mode != "persistent")
            throw ShapeError("config: routing mode must be reset or persistent");
    } else if (head == "cnn") {
        if (detection.k_total < 2) throw ShapeError("config: K_total must be >= 2");
        for (index_t h : mlp_dims)
            if (h < 1) throw ShapeError("config: mlp dims must be >= 1");
    } else {
        throw ShapeError("config: head must be capsule or cnn");
    }
}

namespace {

json block_to_json(const CnnBlockConfig& b) {
    return json{{"n_kernels", b.n_kernels}, {"kernel_h", b.kernel_h}, {"kernel_w", b.kernel_w},
                {"pool", b.pool_p},         {"activation", b.activation},
                {"dropout", b.dropout},     {"batchnorm", b.batchnorm}};
}

CnnBlockConfig block_from_json(const json& j) {
    CnnBlockConfig b;
    b.n_kernels = j.at("n_kernels").get<index_t>();
    b.kernel_h = j.at("kernel_h").get<index_t>();
    b.kernel_w = j.at("kernel_w").get<index_t>();
    b.pool_p = j.at("pool").get<index_t>();
    b.activation = j.value("activation", "relu");
    b.dropout = j.value("dropout", 0.0);
    b.batchnorm = j.value("batchnorm", false);
    return b;
}

}  // namespace

std::string ModelConfig::to_json() const {
    json j;
    j["input"] = {{"t", input.t_frames}, {"f", input.f_bins}, {"channels", input.channels}};
    j["blocks"] = json::array();
    for (const auto& b : blocks) j["blocks"].push_back(block_to_json(b));
    j["primary"] = {{"m", primary.m_caps},
                    {"kernel_h", primary.kernel_h},
                    {"kernel_w", primary.kernel_w},
                    {"j", primary.j_kernels},
                    {"dropout", primary.dropout}};
    j["detection"] = {{"k_total", detection.k_total}, {"g", detection.g_dim}};
    j["routing"] = {{"iterations", routing.iterations},
                    {"mode", routing.mode},
                    {"stop_alpha_gradient", routing.stop_alpha_gradient}};
    j["head"] = head;
    j["mlp_dims"] = mlp_dims;
    j["l2"] = {{"enabled", l2_enabled}, {"lambda", l2_lambda}};
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("model config: invalid JSON: ") + e.what());
    }
    try {
        ModelConfig c;
        const json& in = j.at("input");
        c.input.t_frames = in.at("t").get<index_t>();
        c.input.f_bins = in.at("f").get<index_t>();
        c.input.channels = in.value("channels", index_t{1});
        for (const auto& b : j.at("blocks")) c.blocks.push_back(block_from_json(b));
        if (j.contains("primary")) {
            const json& p = j["primary"];
            c.primary.m_caps = p.value("m", index_t{4});
            c.primary.kernel_h = p.value("kernel_h", index_t{3});
            c.primary.kernel_w = p.value("kernel_w", index_t{3});
            c.primary.j_kernels = p.value("j", index_t{4});
            c.primary.dropout = p.value("dropout", 0.0);
        }
        const json& det = j.at("detection");
        c.detection.k_total = det.at("k_total").get<index_t>();
        c.detection.g_dim = det.value("g", index_t{4});
        if (j.contains("routing")) {
            const json& r = j["routing"];
            c.routing.iterations = r.value("iterations", 3);
            c.routing.mode = r.value("mode", "reset");
            c.routing.stop_alpha_gradient = r.value("stop_alpha_gradient", false);
        }
        c.head = j.value("head", "capsule");
        if (j.contains("mlp_dims")) c.mlp_dims = j["mlp_dims"].get<std::vector<index_t>>();
        if (j.contains("l2")) {
            c.l2_enabled = j["l2"].value("enabled", false);
            c.l2_lambda = j["l2"].value("lambda", 0.01);
        }
        return c;
    } catch (const json::exception& e) {
        throw DataError(std::string("model config: missing/invalid field: ") + e.what());
    }
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig c;
    if (name == "home") {
        // 11 target classes + background; binaural STFT input
        c.input = {256, 513, 2};
        for (index_t k : {32, 32, 8}) {
            CnnBlockConfig b;
            b.n_kernels = k;
            b.kernel_h = b.kernel_w = 6;
            b.activation = "relu";
            b.batchnorm = true;
            b.dropout = 0.3;
            c.blocks.push_back(b);
        }
        c.blocks[0].pool_p = 4;
        c.blocks[1].pool_p = 3;
        c.blocks[2].pool_p = 2;
        c.primary = {8, 4, 4, 9, 0.1};
        c.detection = {12, 11};
        c.routing = {3, "reset", false};
    } else if (name == "street") {
        // 6 target classes + background; monaural STFT input
        c.input = {256, 513, 1};
        for (index_t k : {4, 16, 32, 4}) {
            CnnBlockConfig b;
            b.n_kernels = k;
            b.kernel_h = b.kernel_w = 4;
            b.pool_p = 2;
            b.activation = "relu";
            b.batchnorm = true;
            b.dropout = 0.3;
            c.blocks.push_back(b);
        }
        c.primary = {7, 3, 3, 16, 0.1};
        c.detection = {7, 8};
        c.routing = {4, "reset", false};
    } else {
        throw DataError("unknown preset '" + name + "' (expected home or street)");
    }
    c.validate();
    return c;
}

}  // namespace capsed
