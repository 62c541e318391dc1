#include "cogtraj/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cogtraj/rng.hpp"

namespace fs = std::filesystem;

namespace cogtraj {

namespace {

constexpr double kBrainSemiFrac = 0.42;  // brain semi-axis as a fraction of each dim
constexpr double kCavityFracLo = 0.05;   // cavity semi-axis fraction of brain at a = 0
constexpr double kCavityFracHi = 0.35;   // ... and at a = 1

double cavity_frac(double atrophy) {
    return kCavityFracLo + (kCavityFracHi - kCavityFracLo) * atrophy;
}

std::string subject_name(std::size_t index, std::size_t n_subjects) {
    std::size_t width = 1;
    for (std::size_t v = n_subjects; v >= 10; v /= 10) ++width;
    std::string digits = std::to_string(index + 1);
    return "sub" + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

} // namespace

ScoreManifest default_phantom_manifest() {
    static const double maxes[13] = {10, 5, 8, 12, 6, 9, 7, 10, 5, 8, 6, 12, 9};
    ScoreManifest m;
    for (int i = 0; i < 13; ++i) {
        std::string idx = std::to_string(i + 1);
        m.entries.push_back({"sub" + std::string(idx.size() < 2 ? "0" : "") + idx, 0.0, maxes[i]});
    }
    return m;
}

void PhantomSpec::validate() const {
    if (n_subjects < 1) throw validation_error("phantom: n_subjects must be >= 1");
    if (n_samples < n_subjects) {
        throw validation_error("phantom: n_samples " + std::to_string(n_samples) +
                               " must be >= n_subjects " + std::to_string(n_subjects));
    }
    if (n_samples > n_subjects * kIntervalGrid.size()) {
        throw validation_error("phantom: n_samples " + std::to_string(n_samples) + " exceeds " +
                               std::to_string(n_subjects * kIntervalGrid.size()) +
                               " (subjects x 7 distinct intervals)");
    }
    for (std::size_t d : dims) {
        if (d < 8) {
            throw validation_error("phantom: dims must be >= 8 per axis for the cavity, got " +
                                   std::to_string(d));
        }
    }
    if (!(atrophy_lo >= 0.0 && atrophy_hi <= 1.0 && atrophy_lo <= atrophy_hi)) {
        throw validation_error("phantom: atrophy range must satisfy 0 <= lo <= hi <= 1");
    }
    if (voxel_noise_std < 0.0 || score_noise_std < 0.0) {
        throw validation_error("phantom: noise_std values must be >= 0");
    }
    manifest.validate();
}

nlohmann::json PhantomSpec::to_json() const {
    nlohmann::json j;
    j["n_samples"] = n_samples;
    j["dims"] = dims;
    j["n_subjects"] = n_subjects;
    j["atrophy_range"] = {atrophy_lo, atrophy_hi};
    j["voxel_noise_std"] = voxel_noise_std;
    j["score_noise_std"] = score_noise_std;
    j["seed"] = seed;
    j["manifest"] = manifest.to_json();
    return j;
}

PhantomSpec PhantomSpec::from_json(const nlohmann::json& j) {
    PhantomSpec s;
    if (j.contains("n_samples")) s.n_samples = j.at("n_samples").get<std::size_t>();
    if (j.contains("dims")) j.at("dims").get_to(s.dims);
    if (j.contains("n_subjects")) s.n_subjects = j.at("n_subjects").get<std::size_t>();
    if (j.contains("atrophy_range")) {
        s.atrophy_lo = j.at("atrophy_range").at(0).get<double>();
        s.atrophy_hi = j.at("atrophy_range").at(1).get<double>();
    }
    if (j.contains("voxel_noise_std")) s.voxel_noise_std = j.at("voxel_noise_std").get<double>();
    if (j.contains("score_noise_std")) s.score_noise_std = j.at("score_noise_std").get<double>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("manifest")) s.manifest = ScoreManifest::from_json(j.at("manifest"));
    s.validate();
    return s;
}

PhantomSpec PhantomSpec::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open phantom spec: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("phantom spec " + path + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

Tensor<float> phantom_volume(const PhantomSpec& spec, double atrophy,
                             std::uint64_t subject_seed) {
    const double D = static_cast<double>(spec.dims[0]);
    const double H = static_cast<double>(spec.dims[1]);
    const double W = static_cast<double>(spec.dims[2]);
    const double cd = 0.5 * (D - 1), ch = 0.5 * (H - 1), cw = 0.5 * (W - 1);
    const double bd = kBrainSemiFrac * D, bh = kBrainSemiFrac * H, bw = kBrainSemiFrac * W;
    const double cf = cavity_frac(atrophy);
    const double vd = cf * bd, vh = cf * bh, vw = cf * bw;

    Tensor<float> vol({1, spec.dims[0], spec.dims[1], spec.dims[2]});
    Rng rng(subject_seed);
    std::size_t idx = 0;
    for (std::size_t z = 0; z < spec.dims[0]; ++z) {
        const double dz = (static_cast<double>(z) - cd);
        for (std::size_t y = 0; y < spec.dims[1]; ++y) {
            const double dy = (static_cast<double>(y) - ch);
            for (std::size_t x = 0; x < spec.dims[2]; ++x, ++idx) {
                const double dx = (static_cast<double>(x) - cw);
                const double brain = (dz * dz) / (bd * bd) + (dy * dy) / (bh * bh) +
                                     (dx * dx) / (bw * bw);
                const double cavity = (dz * dz) / (vd * vd) + (dy * dy) / (vh * vh) +
                                      (dx * dx) / (vw * vw);
                double v = (brain <= 1.0 && cavity > 1.0) ? 1.0 : 0.0;
                if (spec.voxel_noise_std > 0.0) {
                    v += rng.normal(0.0, spec.voxel_noise_std);
                }
                vol[idx] = static_cast<float>(v);
            }
        }
    }
    return vol;
}

std::size_t cavity_voxel_count(const PhantomSpec& spec, double atrophy) {
    const double D = static_cast<double>(spec.dims[0]);
    const double H = static_cast<double>(spec.dims[1]);
    const double W = static_cast<double>(spec.dims[2]);
    const double cd = 0.5 * (D - 1), ch = 0.5 * (H - 1), cw = 0.5 * (W - 1);
    const double bd = kBrainSemiFrac * D, bh = kBrainSemiFrac * H, bw = kBrainSemiFrac * W;
    const double cf = cavity_frac(atrophy);
    const double vd = cf * bd, vh = cf * bh, vw = cf * bw;
    std::size_t count = 0;
    for (std::size_t z = 0; z < spec.dims[0]; ++z) {
        const double dz = (static_cast<double>(z) - cd);
        for (std::size_t y = 0; y < spec.dims[1]; ++y) {
            const double dy = (static_cast<double>(y) - ch);
            for (std::size_t x = 0; x < spec.dims[2]; ++x) {
                const double dx = (static_cast<double>(x) - cw);
                const double cavity = (dz * dz) / (vd * vd) + (dy * dy) / (vh * vh) +
                                      (dx * dx) / (vw * vw);
                if (cavity <= 1.0) ++count;
            }
        }
    }
    return count;
}

double phantom_true_subscore(double w, double v, double atrophy, int interval_months) {
    const double raw = w * atrophy + v * (static_cast<double>(interval_months) / 36.0);
    return std::clamp(raw, 0.0, 1.0);
}

PhantomOutput generate(const PhantomSpec& spec, const std::string& out_dir) {
    spec.validate();
    fs::create_directories(out_dir);
    const fs::path root(out_dir);
    const fs::path vol_dir = root / "volumes";
    fs::create_directories(vol_dir);

    const std::size_t score_count = spec.manifest.entries.size();
    Rng weight_rng(mix_seed(spec.seed, 7));
    std::vector<double> w(score_count), v(score_count);
    for (std::size_t i = 0; i < score_count; ++i) w[i] = 0.35 + 0.40 * weight_rng.uniform();
    for (std::size_t i = 0; i < score_count; ++i) v[i] = 0.05 + 0.20 * weight_rng.uniform();

    // one volume per subject; atrophy and voxel noise come from the subject's
    // own seeded stream so every artifact reproduces from (seed, index)
    std::vector<double> atrophy(spec.n_subjects);
    std::vector<std::string> subject_ids(spec.n_subjects);
    nlohmann::json truth_subjects = nlohmann::json::array();
    for (std::size_t j = 0; j < spec.n_subjects; ++j) {
        const std::uint64_t sseed = mix_seed(spec.seed, 1000 + j);
        Rng srng(sseed);
        atrophy[j] = spec.atrophy_lo + (spec.atrophy_hi - spec.atrophy_lo) * srng.uniform();
        subject_ids[j] = subject_name(j, spec.n_subjects);
        Tensor<float> vol = phantom_volume(spec, atrophy[j], mix_seed(sseed, 1));
        VolumeMeta meta;
        meta.subject_id = subject_ids[j];
        write_volume((vol_dir / (subject_ids[j] + ".vol")).string(), vol, meta);
        truth_subjects.push_back({{"id", subject_ids[j]}, {"atrophy", atrophy[j]}});
    }

    PhantomOutput out;
    std::vector<SampleTuple> samples;
    std::vector<std::vector<int>> used(spec.n_subjects);
    nlohmann::json truth_samples = nlohmann::json::array();
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        const std::size_t j = i % spec.n_subjects;
        Rng srng(mix_seed(spec.seed, 3000 + i));
        std::vector<int> unused;
        for (int g : kIntervalGrid) {
            if (std::find(used[j].begin(), used[j].end(), g) == used[j].end()) {
                unused.push_back(g);
            }
        }
        const int interval = unused[srng.below(unused.size())];
        used[j].push_back(interval);

        std::vector<double> true_norm(score_count), noisy_norm(score_count);
        for (std::size_t s = 0; s < score_count; ++s) {
            true_norm[s] = phantom_true_subscore(w[s], v[s], atrophy[j], interval);
            double noisy = true_norm[s];
            if (spec.score_noise_std > 0.0) noisy += srng.normal(0.0, spec.score_noise_std);
            noisy_norm[s] = std::clamp(noisy, 0.0, 1.0);
        }
        SampleTuple t;
        t.subject_id = subject_ids[j];
        t.volume_path = (fs::path("volumes") / (subject_ids[j] + ".vol")).string();
        t.interval_months = interval;
        t.raw_scores = denormalize_scores(noisy_norm, spec.manifest);
        t.normalized_scores = noisy_norm;
        samples.push_back(std::move(t));
        ++out.interval_counts[interval];
        truth_samples.push_back({{"index", i},
                                 {"subject_id", subject_ids[j]},
                                 {"interval_months", interval},
                                 {"true_normalized", true_norm},
                                 {"noisy_normalized", noisy_norm}});
    }

    out.dataset_csv = (root / "dataset.csv").string();
    out.manifest_path = (root / "manifest.json").string();
    out.truth_path = (root / "truth.json").string();
    out.volume_dir = vol_dir.string();
    out.n_samples = spec.n_samples;
    write_dataset_csv(out.dataset_csv, spec.manifest, samples);
    spec.manifest.save(out.manifest_path);

    nlohmann::json truth;
    truth["seed"] = spec.seed;
    truth["w"] = w;
    truth["v"] = v;
    truth["subjects"] = truth_subjects;
    truth["samples"] = truth_samples;
    std::ofstream tf(out.truth_path);
    if (!tf) throw io_error("cannot open truth table for writing: " + out.truth_path);
    tf << truth.dump(2) << '\n';
    return out;
}

const std::vector<double>& BaselinePredictor::predict(int interval_months) const {
    auto it = mean_by_interval.find(interval_months);
    return it == mean_by_interval.end() ? overall_mean : it->second;
}

BaselinePredictor baseline_predictor(const Tensor<double>& targets,
                                     const std::vector<int>& intervals) {
    if (targets.rank() != 2 || targets.extent(0) == 0) {
        throw param_error("baseline_predictor: targets must be a nonempty [N, S] tensor");
    }
    if (intervals.size() != targets.extent(0)) {
        throw shape_error("baseline_predictor: " + std::to_string(intervals.size()) +
                          " intervals for " + std::to_string(targets.extent(0)) + " rows");
    }
    const std::size_t n = targets.extent(0), s_count = targets.extent(1);
    BaselinePredictor b;
    b.score_count = s_count;
    b.overall_mean.assign(s_count, 0.0);
    std::map<int, std::size_t> counts;
    for (std::size_t i = 0; i < n; ++i) {
        auto& acc = b.mean_by_interval.try_emplace(intervals[i], s_count, 0.0).first->second;
        for (std::size_t s = 0; s < s_count; ++s) {
            acc[s] += targets(i, s);
            b.overall_mean[s] += targets(i, s);
        }
        ++counts[intervals[i]];
    }
    for (auto& [interval, acc] : b.mean_by_interval) {
        for (double& v : acc) v /= static_cast<double>(counts[interval]);
    }
    for (double& v : b.overall_mean) v /= static_cast<double>(n);
    return b;
}

} // namespace cogtraj
