#include "capsed/data/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "capsed/common.hpp"
#include "capsed/metrics/events.hpp"

namespace capsed {

namespace fs = std::filesystem;

namespace {

std::string join(const std::string& base, const std::string& rel) {
    if (rel.empty() || fs::path(rel).is_absolute() || base.empty()) return rel;
    return (fs::path(base) / rel).string();
}

}  // namespace

std::string Manifest::audio_path(size_t i) const { return join(base_dir, entries[i].audio); }
std::string Manifest::annotation_path(size_t i) const {
    return join(base_dir, entries[i].annotation);
}

Manifest load_manifest(const std::string& path, bool check_files) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");
    Manifest m;
    m.base_dir = fs::path(path).parent_path().string();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string fold;
        if (!std::getline(ls, e.audio, '\t') || !std::getline(ls, e.annotation, '\t') ||
            !std::getline(ls, e.scene, '\t') || !std::getline(ls, fold, '\t'))
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": expected audio<TAB>annotation<TAB>scene<TAB>fold");
        try {
            e.fold = std::stoi(fold);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad fold value '" + fold + "'");
        }
        m.entries.push_back(std::move(e));
    }
    if (check_files) {
        for (size_t i = 0; i < m.entries.size(); ++i) {
            if (!fs::exists(m.audio_path(i)))
                throw DataError(path + ": missing audio file " + m.audio_path(i));
            if (!fs::exists(m.annotation_path(i)))
                throw DataError(path + ": missing annotation file " + m.annotation_path(i));
        }
    }
    return m;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << "# capsed manifest: audio\tannotation\tscene\tfold\n";
    for (const auto& e : manifest.entries)
        out << e.audio << "\t" << e.annotation << "\t" << e.scene << "\t" << e.fold << "\n";
    if (!out) throw DataError(path + ": write failed");
}

void make_folds(Manifest& manifest, int n_folds, std::uint64_t seed) {
    const size_t n = manifest.entries.size();
    if (n_folds < 1 || static_cast<size_t>(n_folds) > n)
        throw DataError("make_folds: need 1 <= n_folds <= n_entries (" + std::to_string(n_folds) +
                        " folds, " + std::to_string(n) + " entries)");
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(seed, 0xf01d5u);
    rng.shuffle(order);
    for (size_t i = 0; i < n; ++i)
        manifest.entries[order[i]].fold = static_cast<int>(i % static_cast<size_t>(n_folds));
}

std::vector<std::string> collect_labels(const Manifest& manifest) {
    std::set<std::string> labels;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        const EventList events = parse_annotations(manifest.annotation_path(i));
        for (const Event& e : events) labels.insert(e.label);
    }
    return {labels.begin(), labels.end()};
}

}  // namespace capsed
