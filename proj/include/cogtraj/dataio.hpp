#pragma once

// Volume and score ingestion: .vol files with JSON sidecars, score
// normalization against a manifest, dataset CSV loading, and stratified
// fold construction.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cogtraj/error.hpp"
#include "cogtraj/tensor.hpp"

namespace cogtraj {

inline constexpr std::array<int, 7> kIntervalGrid{0, 6, 12, 18, 24, 30, 36};

inline bool interval_on_grid(int months) {
    for (int v : kIntervalGrid) {
        if (v == months) return true;
    }
    return false;
}

struct ScoreEntry {
    std::string name;
    double raw_min = 0.0;
    double raw_max = 1.0;
};

struct ScoreManifest {
    std::string version = "1";
    std::vector<ScoreEntry> entries;

    void validate() const;
    nlohmann::json to_json() const;
    static ScoreManifest from_json(const nlohmann::json& j);
    static ScoreManifest load(const std::string& path);
    void save(const std::string& path) const;
};

// strict: out-of-range raw values are validation errors; clamp: pin to range
enum class RangePolicy { strict, clamp };

std::vector<double> normalize_scores(const std::vector<double>& raw, const ScoreManifest& m,
                                     RangePolicy policy = RangePolicy::strict);
std::vector<double> denormalize_scores(const std::vector<double>& normalized,
                                       const ScoreManifest& m);

struct SampleTuple {
    std::string subject_id;
    std::string volume_path; // resolved against the volume root
    int interval_months = 0;
    std::vector<double> raw_scores;
    std::vector<double> normalized_scores;
};

struct VolumeMeta {
    std::array<std::size_t, 3> dims{0, 0, 0}; // D, H, W
    std::array<double, 3> voxel_mm{1.0, 1.0, 1.0};
    std::string subject_id;
};

// .vol payload: raw little-endian float32, row-major D,H,W; sidecar <path>.json
Tensor<float> load_volume(const std::string& path, VolumeMeta* meta_out = nullptr);
void write_volume(const std::string& path, const Tensor<float>& volume, const VolumeMeta& meta);

template <typename T>
Tensor<T> load_volume_as(const std::string& path, VolumeMeta* meta_out = nullptr) {
    Tensor<float> v = load_volume(path, meta_out);
    if constexpr (std::is_same_v<T, float>) {
        return v;
    } else {
        Tensor<T> out(v.shape());
        for (std::size_t i = 0; i < v.numel(); ++i) out[i] = static_cast<T>(v[i]);
        return out;
    }
}

// shifts/scales voxels to mean 0, population std 1; constant volume -> zeros
template <typename T>
Tensor<T> intensity_normalize(const Tensor<T>& vol) {
    const std::size_t n = vol.numel();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += static_cast<double>(vol[i]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(vol[i]) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    Tensor<T> out(vol.shape());
    if (var <= 0.0) return out; // zeros
    const double inv_std = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<T>((static_cast<double>(vol[i]) - mean) * inv_std);
    }
    return out;
}

// CSV columns: subject_id,volume_path,interval_months,<score names in manifest order>
std::vector<SampleTuple> load_dataset(const std::string& table_path, const ScoreManifest& m,
                                      const std::string& volume_root,
                                      RangePolicy policy = RangePolicy::strict);
void write_dataset_csv(const std::string& table_path, const ScoreManifest& m,
                       const std::vector<SampleTuple>& samples);

struct FoldPlan {
    std::uint64_t seed = 0;
    std::size_t k = 5;
    std::vector<std::size_t> assignment; // sample index -> fold id

    nlohmann::json to_json() const;
    static FoldPlan from_json(const nlohmann::json& j);
    static FoldPlan load(const std::string& path);
    void save(const std::string& path) const;
};

struct FoldBuild {
    FoldPlan plan;
    std::vector<std::string> warnings;
};

// Within each interval group, shuffle by seeded rng then deal round-robin
// from a fold cursor that keeps running across groups, so per-interval
// per-fold counts differ by at most 1 and total fold sizes stay balanced.
// group_by_subject keeps all samples of a subject in one fold (stratification
// then becomes approximate, which is warned about).
FoldBuild build_stratified_folds(const std::vector<SampleTuple>& samples, std::size_t k,
                                 std::uint64_t seed, bool group_by_subject = false);

struct FoldSplit {
    std::vector<std::size_t> train; // sample indices
    std::vector<std::size_t> test;
};

FoldSplit fold_split(const std::vector<SampleTuple>& samples, const FoldPlan& plan,
                     std::size_t fold_id);

// subjects appearing on both sides of the split
std::vector<std::string> subject_leaks(const std::vector<SampleTuple>& samples,
                                       const FoldSplit& split);

// per-interval per-fold count matrix, intervals in ascending order
std::vector<std::pair<int, std::vector<std::size_t>>> fold_interval_counts(
    const std::vector<SampleTuple>& samples, const FoldPlan& plan);

} // namespace cogtraj
