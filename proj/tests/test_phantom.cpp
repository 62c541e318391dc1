#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "cogtraj/phantom.hpp"
#include "cogtraj/rng.hpp"

using namespace cogtraj;
namespace fs = std::filesystem;

namespace {

PhantomSpec small_spec() {
    PhantomSpec spec;
    spec.n_samples = 8;
    spec.n_subjects = 4;
    spec.dims = {8, 8, 8};
    spec.seed = 99;
    return spec;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("cogtraj_phantom_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_SUITE("phantom") {

TEST_CASE("default manifest has 13 named subscores") {
    ScoreManifest m = default_phantom_manifest();
    REQUIRE(m.entries.size() == 13);
    CHECK(m.entries[0].name == "sub01");
    CHECK(m.entries[12].name == "sub13");
    CHECK(m.entries[0].raw_max == 10.0);
    CHECK_NOTHROW(m.validate());
}

TEST_CASE("spec validation") {
    PhantomSpec spec = small_spec();
    CHECK_NOTHROW(spec.validate());
    SUBCASE("no subjects") {
        spec.n_subjects = 0;
        CHECK_THROWS_AS(spec.validate(), validation_error);
    }
    SUBCASE("fewer samples than subjects") {
        spec.n_samples = 3;
        CHECK_THROWS_AS(spec.validate(), validation_error);
    }
    SUBCASE("more samples than subjects x intervals") {
        spec.n_samples = 4 * 7 + 1;
        CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("distinct intervals"),
                             validation_error);
    }
    SUBCASE("dims below 8") {
        spec.dims = {8, 7, 8};
        CHECK_THROWS_AS(spec.validate(), validation_error);
    }
    SUBCASE("bad atrophy range") {
        spec.atrophy_lo = 0.8;
        spec.atrophy_hi = 0.2;
        CHECK_THROWS_AS(spec.validate(), validation_error);
        spec.atrophy_lo = 0.2;
        spec.atrophy_hi = 1.2;
        CHECK_THROWS_AS(spec.validate(), validation_error);
    }
    SUBCASE("negative noise") {
        spec.voxel_noise_std = -0.1;
        CHECK_THROWS_AS(spec.validate(), validation_error);
    }
}

TEST_CASE("spec json round-trip and defaults") {
    PhantomSpec spec = small_spec();
    spec.atrophy_lo = 0.2;
    spec.atrophy_hi = 0.7;
    PhantomSpec back = PhantomSpec::from_json(spec.to_json());
    CHECK(back.to_json() == spec.to_json());

    PhantomSpec defaults = PhantomSpec::from_json(nlohmann::json::object());
    CHECK(defaults.n_samples == 200);
    CHECK(defaults.n_subjects == 100);
    CHECK(defaults.dims == std::array<std::size_t, 3>{32, 32, 32});
    CHECK(defaults.atrophy_lo == 0.1);
    CHECK(defaults.atrophy_hi == 0.9);

    PhantomSpec partial = PhantomSpec::from_json({{"atrophy_range", {0.3, 0.6}}, {"seed", 5}});
    CHECK(partial.atrophy_lo == 0.3);
    CHECK(partial.atrophy_hi == 0.6);
    CHECK(partial.seed == 5);
    CHECK(partial.n_samples == 200);
}

TEST_CASE("phantom volume geometry without noise") {
    PhantomSpec spec;
    spec.dims = {16, 16, 16};
    spec.voxel_noise_std = 0.0;
    Tensor<float> vol = phantom_volume(spec, 0.5, 123);
    REQUIRE(vol.shape() == std::vector<std::size_t>{1, 16, 16, 16});
    CHECK(vol(0, 8, 8, 8) == 0.0f);  // central cavity
    CHECK(vol(0, 8, 8, 2) == 1.0f);  // brain shell
    CHECK(vol(0, 0, 0, 0) == 0.0f);  // outside the brain
    for (std::size_t i = 0; i < vol.numel(); ++i) {
        CHECK((vol[i] == 0.0f || vol[i] == 1.0f));
    }

    SUBCASE("higher atrophy empties more brain voxels") {
        Tensor<float> mild = phantom_volume(spec, 0.1, 123);
        Tensor<float> severe = phantom_volume(spec, 0.9, 123);
        std::size_t mild_on = 0, severe_on = 0;
        for (std::size_t i = 0; i < mild.numel(); ++i) {
            mild_on += mild[i] > 0.5f;
            severe_on += severe[i] > 0.5f;
        }
        CHECK(severe_on < mild_on);
    }
}

TEST_CASE("phantom volume reproduces per seed") {
    PhantomSpec spec;
    spec.dims = {8, 8, 8};
    Tensor<float> a = phantom_volume(spec, 0.4, 5);
    Tensor<float> b = phantom_volume(spec, 0.4, 5);
    CHECK(std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)) == 0);
    Tensor<float> c = phantom_volume(spec, 0.4, 6);
    CHECK(std::memcmp(a.data(), c.data(), a.numel() * sizeof(float)) != 0);
}

TEST_CASE("cavity voxel count grows with atrophy") {
    PhantomSpec spec;
    spec.dims = {16, 16, 16};
    const std::size_t c1 = cavity_voxel_count(spec, 0.1);
    const std::size_t c2 = cavity_voxel_count(spec, 0.5);
    const std::size_t c3 = cavity_voxel_count(spec, 0.9);
    CHECK(c1 < c2);
    CHECK(c2 < c3);
    CHECK(c2 > 0); // at 16^3 the mildest cavity can sit between voxel centers
}

TEST_CASE("true subscore formula") {
    CHECK(phantom_true_subscore(0.5, 0.2, 0.4, 18) == doctest::Approx(0.5 * 0.4 + 0.2 * 0.5));
    CHECK(phantom_true_subscore(0.5, 0.0, 0.4, 0) ==
          phantom_true_subscore(0.5, 0.0, 0.4, 36)); // v = 0: time drops out
    CHECK(phantom_true_subscore(0.7, 0.1, 0.0, 0) == 0.0);
    CHECK(phantom_true_subscore(0.9, 0.2, 1.0, 36) == 1.0); // clamped from 1.1
    // a=1 vs a=0 at t=0 differ by exactly w
    CHECK(phantom_true_subscore(0.45, 0.1, 1.0, 0) - phantom_true_subscore(0.45, 0.1, 0.0, 0) ==
          doctest::Approx(0.45));
}

TEST_CASE("generate writes a loadable, reproducible corpus") {
    PhantomSpec spec = small_spec();
    fs::path dir = fresh_dir("gen");
    PhantomOutput out = generate(spec, dir.string());

    ScoreManifest m = ScoreManifest::load(out.manifest_path);
    auto samples = load_dataset(out.dataset_csv, m, dir.string());
    REQUIRE(samples.size() == spec.n_samples);

    std::size_t counted = 0;
    for (const auto& [interval, count] : out.interval_counts) {
        CHECK(interval_on_grid(interval));
        counted += count;
    }
    CHECK(counted == spec.n_samples);

    SUBCASE("volumes load and have the configured dims") {
        VolumeMeta meta;
        Tensor<float> vol = load_volume(samples[0].volume_path, &meta);
        CHECK(vol.shape() == std::vector<std::size_t>{1, 8, 8, 8});
        CHECK(meta.subject_id == samples[0].subject_id);
    }

    SUBCASE("truth file reproduces every normalized score") {
        nlohmann::json truth;
        std::ifstream tf(out.truth_path);
        tf >> truth;
        const auto w = truth.at("w").get<std::vector<double>>();
        const auto v = truth.at("v").get<std::vector<double>>();
        REQUIRE(w.size() == m.entries.size());
        std::map<std::string, double> atrophy;
        for (const auto& subj : truth.at("subjects")) {
            atrophy[subj.at("id")] = subj.at("atrophy").get<double>();
        }
        for (const auto& row : truth.at("samples")) {
            const std::string subj = row.at("subject_id");
            const int interval = row.at("interval_months");
            const auto true_norm = row.at("true_normalized").get<std::vector<double>>();
            const auto noisy = row.at("noisy_normalized").get<std::vector<double>>();
            const std::size_t idx = row.at("index");
            for (std::size_t s = 0; s < true_norm.size(); ++s) {
                CHECK(true_norm[s] ==
                      doctest::Approx(phantom_true_subscore(w[s], v[s], atrophy[subj], interval))
                          .epsilon(1e-12));
                CHECK(noisy[s] >= 0.0);
                CHECK(noisy[s] <= 1.0);
                CHECK(samples[idx].normalized_scores[s] == doctest::Approx(noisy[s]));
            }
        }
    }

    SUBCASE("volumes reproduce from the seed schedule") {
        nlohmann::json truth;
        std::ifstream tf(out.truth_path);
        tf >> truth;
        const auto& subj0 = truth.at("subjects").at(0);
        const double a0 = subj0.at("atrophy");
        Tensor<float> expect =
            phantom_volume(spec, a0, mix_seed(mix_seed(spec.seed, 1000), 1));
        const std::string subj0_id = subj0.at("id");
        Tensor<float> stored = load_volume((fs::path(out.volume_dir) / (subj0_id + ".vol")).string());
        CHECK(std::memcmp(expect.data(), stored.data(), expect.numel() * sizeof(float)) == 0);
    }

    SUBCASE("regeneration is byte-identical; a new seed is not") {
        fs::path dir2 = fresh_dir("gen2");
        PhantomOutput out2 = generate(spec, dir2.string());
        CHECK(slurp(out2.dataset_csv) == slurp(out.dataset_csv));
        CHECK(slurp(out2.truth_path) == slurp(out.truth_path));
        for (const auto& entry : fs::directory_iterator(out.volume_dir)) {
            const std::string name = entry.path().filename().string();
            CHECK(slurp(entry.path().string()) ==
                  slurp((fs::path(out2.volume_dir) / name).string()));
        }

        PhantomSpec other = spec;
        other.seed = spec.seed + 1;
        fs::path dir3 = fresh_dir("gen3");
        PhantomOutput out3 = generate(other, dir3.string());
        CHECK(slurp(out3.truth_path) != slurp(out.truth_path));
    }

    SUBCASE("each subject sees an interval at most once") {
        std::map<std::string, std::set<int>> seen;
        for (const auto& s : samples) {
            CHECK(seen[s.subject_id].insert(s.interval_months).second);
        }
    }
}

TEST_CASE("generate honors a custom manifest width") {
    PhantomSpec spec = small_spec();
    spec.manifest.entries = {{"alpha", 0.0, 4.0}, {"beta", 1.0, 3.0}};
    fs::path dir = fresh_dir("gen_narrow");
    PhantomOutput out = generate(spec, dir.string());
    ScoreManifest m = ScoreManifest::load(out.manifest_path);
    REQUIRE(m.entries.size() == 2);
    auto samples = load_dataset(out.dataset_csv, m, dir.string());
    REQUIRE(samples.size() == spec.n_samples);
    CHECK(samples[0].raw_scores.size() == 2);
}

TEST_CASE("baseline predictor averages per interval with a global fallback") {
    Tensor<double> targets = Tensor<double>::from_data({4, 2}, {0.0, 1.0, //
                                                                1.0, 0.0, //
                                                                0.2, 0.4, //
                                                                0.4, 0.6});
    std::vector<int> intervals{0, 0, 36, 36};
    BaselinePredictor b = baseline_predictor(targets, intervals);
    CHECK(b.score_count == 2);
    CHECK(b.predict(0) == std::vector<double>{0.5, 0.5});
    CHECK(b.predict(36)[0] == doctest::Approx(0.3));
    CHECK(b.predict(36)[1] == doctest::Approx(0.5));
    // unseen interval falls back to the overall mean
    CHECK(b.predict(18)[0] == doctest::Approx(0.4));
    CHECK(b.predict(18)[1] == doctest::Approx(0.5));

    CHECK_THROWS_AS(baseline_predictor(Tensor<double>({8}), {0}), param_error);
    CHECK_THROWS_AS(baseline_predictor(targets, {0, 0}), shape_error);
}

} // TEST_SUITE
