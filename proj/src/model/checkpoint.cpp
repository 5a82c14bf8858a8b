#include "capsed/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "capsed/common.hpp"

namespace capsed {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "CAPSED01";
constexpr char kHeaderEnd[] = "%%CAPSED_HEADER_END%%";

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_doubles(std::ostream& out, const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void read_doubles(std::istream& in, Tensor& t, const std::string& path) {
    if (!in.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double))))
        throw DataError(path + ": truncated parameter blob");
}

json norm_to_json(const NormStats& n) {
    if (n.empty()) return nullptr;
    json j;
    j["bins"] = n.mean.dim(0);
    j["channels"] = n.mean.dim(1);
    j["mean"] = std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size());
    j["std"] = std::vector<double>(n.stddev.data(), n.stddev.data() + n.stddev.size());
    return j;
}

NormStats norm_from_json(const json& j) {
    NormStats n;
    if (j.is_null()) return n;
    const index_t f = j.at("bins").get<index_t>();
    const index_t c = j.at("channels").get<index_t>();
    auto mean = j.at("mean").get<std::vector<double>>();
    auto sd = j.at("std").get<std::vector<double>>();
    if (static_cast<index_t>(mean.size()) != f * c || static_cast<index_t>(sd.size()) != f * c)
        throw DataError("checkpoint: norm stats array size mismatch");
    n.mean = Tensor({f, c}, std::move(mean));
    n.stddev = Tensor({f, c}, std::move(sd));
    return n;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const FeatureConfig& features,
                     const NormStats& norm, const std::vector<std::string>& labels) {
    const auto state = model.state();

    json header;
    header["format"] = 1;
    header["model"] = json::parse(model.config().to_json());
    header["features"] = json::parse(features.to_json());
    header["labels"] = labels;
    header["norm"] = norm_to_json(norm);
    json tensors = json::array();
    index_t total = 0;
    for (const auto& t : state) {
        tensors.push_back(t.shape());
        total += t.size();
    }
    header["state_shapes"] = tensors;
    header["state_doubles"] = total;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << kMagic << "\n" << header.dump(2) << "\n" << kHeaderEnd << "\n";
    for (const auto& t : state) write_doubles(out, t);
    if (!out) throw DataError(path + ": write failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line) || line != kMagic)
        throw DataError(path + ": bad magic (not a capsed checkpoint)");
    std::ostringstream header_text;
    bool terminated = false;
    while (std::getline(in, line)) {
        if (line == kHeaderEnd) {
            terminated = true;
            break;
        }
        header_text << line << "\n";
    }
    if (!terminated) throw DataError(path + ": unterminated header");

    json header;
    try {
        header = json::parse(header_text.str());
    } catch (const json::exception& e) {
        throw DataError(path + ": invalid header JSON: " + e.what());
    }

    LoadedCheckpoint lc;
    try {
        lc.meta.model = ModelConfig::from_json(header.at("model").dump());
        lc.meta.features = FeatureConfig::from_json(header.at("features").dump());
        lc.meta.labels = header.at("labels").get<std::vector<std::string>>();
        lc.meta.norm = norm_from_json(header.at("norm"));
    } catch (const json::exception& e) {
        throw DataError(path + ": header field error: " + e.what());
    }

    Rng rng(0);  // values are overwritten from the blob
    lc.model = std::make_unique<Model>(lc.meta.model, rng);

    auto shapes = header.at("state_shapes").get<std::vector<std::vector<index_t>>>();
    std::vector<Tensor> state;
    state.reserve(shapes.size());
    for (const auto& s : shapes) {
        Tensor t(s);
        read_doubles(in, t, path);
        state.push_back(std::move(t));
    }
    lc.model->load_state(state);
    return lc;
}

}  // namespace capsed
