#pragma once

// Effective run configuration: profile defaults, overlaid by an optional
// JSON config file, overlaid by CLI flag patches. The canonical JSON echo
// and its FNV-1a hash stamp every artifact a run produces.

#include <cstdint>
#include <string>

#include "json.hpp"

#include "cogtraj/network.hpp"
#include "cogtraj/optim.hpp"

namespace cogtraj {

struct RunPaths {
    std::string dataset_csv = "data/dataset.csv";
    std::string manifest = "data/manifest.json";
    std::string volume_root = "data";
    std::string out_dir = "runs/out";
};

struct RunConfig {
    std::string profile = "desk"; // desk | paper
    std::string precision = "float32"; // float32 | float64
    std::uint64_t seed = 1;
    bool deterministic = true;
    std::size_t k_folds = 5;
    bool group_by_subject = false;
    int threads = 0; // 0 keeps the library default
    RunPaths paths;
    NetworkConfig network;
    TrainPlan train;
    RmsPropConfig rmsprop;

    void validate() const;
    nlohmann::json to_json() const;

    // profile defaults <- file <- flag patch, each a JSON merge-patch
    static RunConfig resolve(const nlohmann::json& file_overlay,
                             const nlohmann::json& flag_overlay);

    // canonical JSON with locational fields (out_dir) removed
    nlohmann::json hash_relevant_json() const;
    std::string config_hash() const;

    void echo_effective(const std::string& out_dir) const;
};

nlohmann::json load_json_file(const std::string& path, const std::string& what);
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

// desk/paper training defaults live here so both profiles stay side by side
nlohmann::json profile_defaults(const std::string& profile);

} // namespace cogtraj
