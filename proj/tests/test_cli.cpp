// End-to-end checks of the cogtraj binary: exit codes, stream separation,
// and artifact determinism. The binary under test arrives via --cli=<path>.
#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_work;

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

RunResult run_cli(const std::string& args) {
    const fs::path out_file = g_work / "stdout.txt";
    const fs::path err_file = g_work / "stderr.txt";
    const std::string cmd = "\"" + g_cli + "\" " + args + " > \"" + out_file.string() +
                            "\" 2> \"" + err_file.string() + "\"";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = g_work / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    f << text;
}

// 8 samples, 4 subjects, 8^3 voxels: enough for every subcommand, instant to train
const char* kSpecJson = R"({"n_samples": 8, "n_subjects": 4, "dims": [8, 8, 8], "seed": 77})";

fs::path phantom_dir() {
    static fs::path dir = [] {
        fs::path d = fresh_dir("data");
        write_text(g_work / "spec.json", kSpecJson);
        RunResult r = run_cli("gen-data --spec \"" + (g_work / "spec.json").string() +
                              "\" --out \"" + d.string() + "\"");
        REQUIRE(r.exit_code == 0);
        return d;
    }();
    return dir;
}

// a network small enough that train folds finish instantly on 8^3 input
nlohmann::json small_config(const fs::path& data, const fs::path& out) {
    nlohmann::json j;
    j["seed"] = 3;
    j["k_folds"] = 2;
    j["network"] = {{"input_shape", {1, 8, 8, 8}},
                    {"conv_channels", {2, 2, 2}},
                    {"fc_widths", {8, 6, 4}}};
    j["train"] = {{"epochs", 2}, {"batch_size", 4}};
    j["paths"] = {{"dataset_csv", (data / "dataset.csv").string()},
                  {"manifest", (data / "manifest.json").string()},
                  {"volume_root", data.string()},
                  {"out_dir", out.string()}};
    return j;
}

} // namespace

TEST_CASE("help and argument errors") {
    RunResult help = run_cli("--help");
    CHECK(help.exit_code == 0);
    CHECK(help.out.find("gen-data") != std::string::npos);
    CHECK(help.out.find("run-all") != std::string::npos);

    RunResult none = run_cli("");
    CHECK(none.exit_code == 1);

    RunResult unknown = run_cli("frobnicate");
    CHECK(unknown.exit_code == 1);

    RunResult bad_profile = run_cli("split --profile laptop");
    CHECK(bad_profile.exit_code == 1);

    RunResult missing_required = run_cli("train"); // --fold is required
    CHECK(missing_required.exit_code == 1);
}

TEST_CASE("gen-data writes a corpus and reports interval counts") {
    fs::path data = phantom_dir();
    CHECK(fs::exists(data / "dataset.csv"));
    CHECK(fs::exists(data / "manifest.json"));
    CHECK(fs::exists(data / "truth.json"));
    CHECK(fs::exists(data / "volumes" / "sub1.vol"));

    write_text(g_work / "spec.json", kSpecJson);
    RunResult r = run_cli("gen-data --spec \"" + (g_work / "spec.json").string() +
                          "\" --out \"" + fresh_dir("data_again").string() + "\"");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("samples: 8") != std::string::npos);
    CHECK(r.out.find("interval_months,count") != std::string::npos);
    CHECK(r.err.empty());

    SUBCASE("same spec, byte-identical dataset") {
        CHECK(slurp(g_work / "data_again" / "dataset.csv") == slurp(data / "dataset.csv"));
        CHECK(slurp(g_work / "data_again" / "truth.json") == slurp(data / "truth.json"));
    }
    SUBCASE("invalid spec fails with exit 1") {
        write_text(g_work / "bad_spec.json", R"({"dims": [4, 4, 4]})");
        RunResult bad = run_cli("gen-data --spec \"" + (g_work / "bad_spec.json").string() +
                                "\" --out \"" + fresh_dir("data_bad").string() + "\"");
        CHECK(bad.exit_code == 1);
        CHECK(bad.err.find("error:") != std::string::npos);
    }
}

TEST_CASE("split builds a deterministic fold plan") {
    fs::path data = phantom_dir();
    fs::path out = fresh_dir("split_out");
    const std::string base = "split --dataset \"" + (data / "dataset.csv").string() +
                             "\" --manifest \"" + (data / "manifest.json").string() +
                             "\" --volume-root \"" + data.string() + "\" --out \"" +
                             out.string() + "\" --folds 2 --seed 5";
    RunResult r = run_cli(base);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("fold plan: ") != std::string::npos);
    CHECK(r.out.find("interval_months,fold0,fold1") != std::string::npos);
    CHECK(fs::exists(out / "foldplan.json"));
    CHECK(fs::exists(out / "effective_config.json"));
    // 8 samples over >= 4 intervals: some group is smaller than k, which warns
    CHECK(r.err.find("warning:") != std::string::npos);
    CHECK(r.out.find("warning:") == std::string::npos); // diagnostics stay off stdout

    SUBCASE("re-running yields a byte-identical plan") {
        const std::string plan1 = slurp(out / "foldplan.json");
        RunResult again = run_cli(base);
        REQUIRE(again.exit_code == 0);
        CHECK(slurp(out / "foldplan.json") == plan1);
        CHECK(again.out == r.out);
    }
    SUBCASE("more folds than samples fails") {
        RunResult bad = run_cli("split --dataset \"" + (data / "dataset.csv").string() +
                                "\" --manifest \"" + (data / "manifest.json").string() +
                                "\" --volume-root \"" + data.string() + "\" --out \"" +
                                fresh_dir("split_bad").string() + "\" --folds 9");
        CHECK(bad.exit_code == 1);
        CHECK(bad.err.find("error:") != std::string::npos);
        CHECK(bad.err.find("exceeds sample count") != std::string::npos);
    }
}

TEST_CASE("train, eval, report, predict pipeline") {
    fs::path data = phantom_dir();
    fs::path out = fresh_dir("run_out");
    write_text(g_work / "config.json", small_config(data, out).dump(2));
    const std::string cfg = " --config \"" + (g_work / "config.json").string() + "\"";

    RunResult split = run_cli("split" + cfg);
    REQUIRE(split.exit_code == 0);

    for (int fold = 0; fold < 2; ++fold) {
        RunResult train = run_cli("train --fold " + std::to_string(fold) + cfg);
        REQUIRE(train.exit_code == 0);
        CHECK(train.out.find("checkpoint: ") != std::string::npos);
        CHECK(train.out.find("final_loss: ") != std::string::npos);
        const fs::path fold_dir = out / ("fold" + std::to_string(fold));
        CHECK(fs::exists(fold_dir / "checkpoint.ctj"));
        CHECK(fs::exists(fold_dir / "train_log.jsonl"));

        RunResult eval = run_cli("eval --fold " + std::to_string(fold) + cfg);
        REQUIRE(eval.exit_code == 0);
        CHECK(fs::exists(fold_dir / "predictions.csv"));
        CHECK(fs::exists(fold_dir / "rmse_by_subscore_interval.csv"));
        CHECK(fs::exists(fold_dir / "aggregate_by_interval.csv"));
    }

    RunResult report = run_cli("report" + cfg);
    REQUIRE(report.exit_code == 0);
    CHECK(report.out.find("aggregate rmse") != std::string::npos);
    CHECK(report.out.find("summary: ") != std::string::npos);
    CHECK(fs::exists(out / "summary.json"));

    SUBCASE("eval before train fails cleanly") {
        fs::path out2 = fresh_dir("run_out2");
        write_text(g_work / "config2.json", small_config(data, out2).dump(2));
        const std::string cfg2 = " --config \"" + (g_work / "config2.json").string() + "\"";
        RunResult split2 = run_cli("split" + cfg2);
        REQUIRE(split2.exit_code == 0);
        RunResult eval = run_cli("eval --fold 0" + cfg2);
        CHECK(eval.exit_code == 1);
        CHECK(eval.err.find("error:") != std::string::npos);
    }

    SUBCASE("report with missing folds names them") {
        fs::path out3 = fresh_dir("run_out3");
        write_text(g_work / "config3.json", small_config(data, out3).dump(2));
        const std::string cfg3 = " --config \"" + (g_work / "config3.json").string() + "\"";
        REQUIRE(run_cli("split" + cfg3).exit_code == 0);
        RunResult rep = run_cli("report" + cfg3);
        CHECK(rep.exit_code == 1);
        CHECK(rep.err.find("missing fold outputs") != std::string::npos);
    }

    SUBCASE("predict emits one json row per month") {
        const std::string ckpt = (out / "fold0" / "checkpoint.ctj").string();
        const std::string vol = (data / "volumes" / "sub1.vol").string();
        RunResult pr = run_cli("predict --checkpoint \"" + ckpt + "\" --volume \"" + vol +
                               "\" --months 0 12 36");
        REQUIRE(pr.exit_code == 0);
        nlohmann::json rows = nlohmann::json::parse(pr.out);
        REQUIRE(rows.is_array());
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].at("months") == 0.0);
        CHECK(rows[2].at("months") == 36.0);
        CHECK(rows[0].at("normalized_scores").size() == 13);
        CHECK(!rows[0].contains("raw_scores"));

        RunResult with_manifest =
            run_cli("predict --checkpoint \"" + ckpt + "\" --volume \"" + vol +
                    "\" --months 6 --manifest \"" + (data / "manifest.json").string() + "\"");
        REQUIRE(with_manifest.exit_code == 0);
        nlohmann::json mrows = nlohmann::json::parse(with_manifest.out);
        CHECK(mrows[0].at("raw_scores").size() == 13);

        RunResult late = run_cli("predict --checkpoint \"" + ckpt + "\" --volume \"" + vol +
                                 "\" --months 37");
        CHECK(late.exit_code == 1);
        CHECK(late.err.find("error:") != std::string::npos);

        RunResult clamped = run_cli("predict --checkpoint \"" + ckpt + "\" --volume \"" + vol +
                                    "\" --months 37 --permissive");
        CHECK(clamped.exit_code == 0);

        RunResult repeat = run_cli("predict --checkpoint \"" + ckpt + "\" --volume \"" + vol +
                                   "\" --months 0 12 36");
        CHECK(repeat.out == pr.out); // inference is deterministic
    }
}

TEST_CASE("run-all drives the whole experiment") {
    fs::path data = g_work / "all_data"; // not created: run-all generates it
    fs::remove_all(data);
    fs::path out = fresh_dir("all_out");
    write_text(g_work / "all_spec.json", kSpecJson);
    nlohmann::json cfg = small_config(data, out);
    write_text(g_work / "all_config.json", cfg.dump(2));
    const std::string flags = " --config \"" + (g_work / "all_config.json").string() +
                              "\" --spec \"" + (g_work / "all_spec.json").string() + "\"";

    RunResult r = run_cli("run-all" + flags);
    REQUIRE(r.exit_code == 0);
    CHECK(r.err.find("generated phantom dataset") != std::string::npos);
    CHECK(r.out.find("summary: ") != std::string::npos);
    CHECK(fs::exists(data / "dataset.csv"));
    CHECK(fs::exists(out / "summary.json"));
    CHECK(fs::exists(out / "fold0" / "checkpoint.ctj"));
    CHECK(fs::exists(out / "fold1" / "predictions.csv"));

    SUBCASE("a second run reuses the dataset and reproduces the summary") {
        const std::string summary1 = slurp(out / "summary.json");
        RunResult again = run_cli("run-all" + flags);
        REQUIRE(again.exit_code == 0);
        CHECK(again.err.find("generated phantom dataset") == std::string::npos);
        CHECK(slurp(out / "summary.json") == summary1);
    }
}

TEST_CASE("runtime abort exits with code 2") {
    fs::path data = phantom_dir();
    fs::path out = fresh_dir("abort_out");
    nlohmann::json cfg = small_config(data, out);
    cfg["rmsprop"] = {{"lr", 1e30}}; // first update overflows float32 activations
    cfg["train"]["epochs"] = 4;
    write_text(g_work / "abort_config.json", cfg.dump(2));
    const std::string flags = " --config \"" + (g_work / "abort_config.json").string() + "\"";
    REQUIRE(run_cli("split" + flags).exit_code == 0);
    RunResult r = run_cli("train --fold 0" + flags);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("abort: non-finite") != std::string::npos);
}

int main(int argc, char** argv) {
    doctest::Context ctx;
    std::vector<char*> pass;
    for (int i = 0; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg.rfind("--cli=", 0) == 0) {
            g_cli = arg.substr(6);
        } else {
            pass.push_back(argv[i]);
        }
    }
    if (g_cli.empty()) {
        std::cerr << "usage: cli_tests --cli=<path-to-cogtraj> [doctest options]\n";
        return 1;
    }
    g_work = fs::temp_directory_path() / "cogtraj_cli_tests";
    fs::remove_all(g_work);
    fs::create_directories(g_work);
    ctx.applyCommandLine(static_cast<int>(pass.size()), pass.data());
    return ctx.run();
}
