#pragma once

// Synthetic data: ellipsoid "brain" volumes with a central cavity whose
// radius grows with an atrophy parameter, plus subscores that are a known
// affine function of atrophy and prediction time. The cavity is the only
// signal, so a model must read spatial structure to beat the baseline.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "cogtraj/dataio.hpp"
#include "cogtraj/tensor.hpp"

namespace cogtraj {

ScoreManifest default_phantom_manifest();

struct PhantomSpec {
    std::size_t n_samples = 200;
    std::array<std::size_t, 3> dims{32, 32, 32}; // D, H, W
    std::size_t n_subjects = 100;
    double atrophy_lo = 0.1;
    double atrophy_hi = 0.9;
    double voxel_noise_std = 0.05;
    double score_noise_std = 0.02;
    std::uint64_t seed = 1;
    ScoreManifest manifest = default_phantom_manifest();

    void validate() const;
    nlohmann::json to_json() const;
    static PhantomSpec from_json(const nlohmann::json& j);
    static PhantomSpec load(const std::string& path);
};

struct PhantomOutput {
    std::string dataset_csv;
    std::string manifest_path;
    std::string truth_path;
    std::string volume_dir;
    std::map<int, std::size_t> interval_counts;
    std::size_t n_samples = 0;
};

// writes volumes/, dataset.csv, manifest.json, and truth.json under out_dir
PhantomOutput generate(const PhantomSpec& spec, const std::string& out_dir);

// the deterministic pieces, exposed for oracle checks
Tensor<float> phantom_volume(const PhantomSpec& spec, double atrophy, std::uint64_t subject_seed);
std::size_t cavity_voxel_count(const PhantomSpec& spec, double atrophy);
double phantom_true_subscore(double w, double v, double atrophy, int interval_months);

struct BaselinePredictor {
    std::size_t score_count = 0;
    std::map<int, std::vector<double>> mean_by_interval;
    std::vector<double> overall_mean;

    const std::vector<double>& predict(int interval_months) const;
};

// per-(subscore, interval) training mean; unseen intervals fall back to the
// overall per-subscore mean
BaselinePredictor baseline_predictor(const Tensor<double>& targets,
                                     const std::vector<int>& intervals);

} // namespace cogtraj
