#pragma once

#include <string>
#include <vector>

#include "capsed/rng.hpp"

namespace capsed {

struct ManifestEntry {
    std::string audio;       // relative to the manifest directory
    std::string annotation;  // relative to the manifest directory
    std::string scene;
    int fold = -1;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::string base_dir;  // set on load; relative paths resolve against it

    std::string audio_path(size_t i) const;
    std::string annotation_path(size_t i) const;
};

// Tab-separated: audio<TAB>annotation<TAB>scene<TAB>fold, one entry per line;
// lines beginning with '#' ignored.
Manifest load_manifest(const std::string& path, bool check_files = true);
void save_manifest(const std::string& path, const Manifest& manifest);

// Deterministic partition into n_folds test folds (each entry in exactly one).
void make_folds(Manifest& manifest, int n_folds, std::uint64_t seed);

// Sorted union of labels over all annotation files.
std::vector<std::string> collect_labels(const Manifest& manifest);

}  // namespace capsed
