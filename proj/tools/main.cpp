// cogtraj: train and evaluate a time-conditioned 3D CNN that maps a
// structural volume plus a future month offset to 13 normalized cognitive
// subscores. Subcommands cover the full experiment: gen-data, split, train,
// eval, report, predict, and run-all.
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime abort.
// stdout carries data; diagnostics go to stderr.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cogtraj/pipeline.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string profile;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<bool> deterministic;
    std::optional<int> threads;
    std::string dataset_csv, manifest, volume_root;
    std::optional<std::size_t> k_folds;
    std::optional<std::string> precision;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file");
    cmd->add_option("--profile", f.profile, "configuration profile")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--deterministic", f.deterministic, "bit-stable runs (default true)");
    cmd->add_option("--threads", f.threads, "worker thread count (0 = library default)");
    cmd->add_option("--dataset", f.dataset_csv, "dataset CSV path");
    cmd->add_option("--manifest", f.manifest, "score manifest path");
    cmd->add_option("--volume-root", f.volume_root, "root for relative volume paths");
    cmd->add_option("--folds", f.k_folds, "number of folds");
    cmd->add_option("--precision", f.precision, "training precision")
        ->check(CLI::IsMember({"float32", "float64"}));
}

cogtraj::RunConfig resolve_config(const CommonFlags& f) {
    nlohmann::json file = nlohmann::json::object();
    if (!f.config_path.empty()) {
        file = cogtraj::load_json_file(f.config_path, "config file");
    }
    nlohmann::json patch = nlohmann::json::object();
    if (!f.profile.empty()) patch["profile"] = f.profile;
    if (f.seed) patch["seed"] = *f.seed;
    if (f.deterministic) patch["deterministic"] = *f.deterministic;
    if (f.threads) patch["threads"] = *f.threads;
    if (f.k_folds) patch["k_folds"] = *f.k_folds;
    if (f.precision) patch["precision"] = *f.precision;
    if (!f.out_dir.empty()) patch["paths"]["out_dir"] = f.out_dir;
    if (!f.dataset_csv.empty()) patch["paths"]["dataset_csv"] = f.dataset_csv;
    if (!f.manifest.empty()) patch["paths"]["manifest"] = f.manifest;
    if (!f.volume_root.empty()) patch["paths"]["volume_root"] = f.volume_root;
    cogtraj::RunConfig cfg = cogtraj::RunConfig::resolve(file, patch);
#ifdef _OPENMP
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
    return cfg;
}

cogtraj::PhantomSpec resolve_phantom_spec(const std::string& spec_path,
                                          std::optional<std::uint64_t> seed) {
    cogtraj::PhantomSpec spec;
    if (!spec_path.empty()) spec = cogtraj::PhantomSpec::load(spec_path);
    if (seed) spec.seed = *seed;
    spec.validate();
    return spec;
}

void print_interval_counts(const std::map<int, std::size_t>& counts, std::size_t n_samples) {
    std::cout << "samples: " << n_samples << "\n";
    std::cout << "interval_months,count\n";
    for (const auto& [interval, count] : counts) {
        std::cout << interval << ',' << count << '\n';
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cognitive trajectory prediction from volumetric scans"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
    std::string gen_spec_path, gen_out = "data";
    std::optional<std::uint64_t> gen_seed;
    gen->add_option("--spec", gen_spec_path, "phantom spec JSON (defaults are built in)");
    gen->add_option("--out", gen_out, "dataset directory");
    gen->add_option("--seed", gen_seed, "override the spec seed");

    // split
    CommonFlags split_flags;
    auto* split = app.add_subcommand("split", "build the stratified fold plan");
    add_common_flags(split, split_flags);
    bool group_by_subject = false;
    split->add_flag("--group-by-subject", group_by_subject,
                    "keep all samples of a subject in one fold");

    // train
    CommonFlags train_flags;
    std::size_t train_fold = 0;
    auto* train = app.add_subcommand("train", "train one fold");
    add_common_flags(train, train_flags);
    train->add_option("--fold", train_fold, "fold to hold out")->required();

    // eval
    CommonFlags eval_flags;
    std::size_t eval_fold = 0;
    std::string eval_checkpoint;
    auto* eval = app.add_subcommand("eval", "evaluate one fold's checkpoint");
    add_common_flags(eval, eval_flags);
    eval->add_option("--fold", eval_fold, "fold to evaluate")->required();
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path override");

    // report
    CommonFlags report_flags;
    auto* report = app.add_subcommand("report", "merge fold metrics into the summary");
    add_common_flags(report, report_flags);

    // predict
    auto* predict = app.add_subcommand("predict", "predict subscores for one volume");
    std::string pr_checkpoint, pr_volume, pr_manifest;
    std::vector<double> pr_months;
    bool pr_permissive = false;
    predict->add_option("--checkpoint", pr_checkpoint, "checkpoint path")->required();
    predict->add_option("--volume", pr_volume, "input .vol path")->required();
    predict->add_option("--months", pr_months, "future offsets in months")->required();
    predict->add_option("--manifest", pr_manifest, "emit raw scores using this manifest");
    predict->add_flag("--permissive", pr_permissive, "clamp out-of-range months instead of failing");

    // run-all
    CommonFlags all_flags;
    std::string all_spec_path;
    auto* all = app.add_subcommand("run-all", "gen-data (if needed), split, train+eval all folds, report");
    add_common_flags(all, all_flags);
    all->add_option("--spec", all_spec_path, "phantom spec JSON for gen-data");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e); // prints help or the flag error
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            cogtraj::PhantomSpec spec = resolve_phantom_spec(gen_spec_path, gen_seed);
            cogtraj::PhantomOutput out = cogtraj::generate(spec, gen_out);
            print_interval_counts(out.interval_counts, out.n_samples);
        } else if (*split) {
            cogtraj::RunConfig cfg = resolve_config(split_flags);
            if (group_by_subject) cfg.group_by_subject = true;
            cogtraj::SplitResult res = cogtraj::run_split(cfg);
            for (const std::string& w : res.build.warnings) {
                std::cerr << "warning: " << w << '\n';
            }
            std::cout << "fold plan: " << res.plan_path << "\n";
            std::cout << "interval_months";
            for (std::size_t f = 0; f < cfg.k_folds; ++f) std::cout << ",fold" << f;
            std::cout << '\n';
            for (const auto& [interval, row] : res.counts) {
                std::cout << interval;
                for (std::size_t c : row) std::cout << ',' << c;
                std::cout << '\n';
            }
        } else if (*train) {
            cogtraj::RunConfig cfg = resolve_config(train_flags);
            cogtraj::TrainFoldResult res = cogtraj::run_train_fold(cfg, train_fold);
            std::cout << "checkpoint: " << res.checkpoint_path << '\n';
            if (!res.history.empty()) {
                std::cout << "epochs: " << res.history.size()
                          << " first_loss: " << res.history.front()
                          << " final_loss: " << res.history.back() << '\n';
            }
        } else if (*eval) {
            cogtraj::RunConfig cfg = resolve_config(eval_flags);
            cogtraj::EvalFoldResult res = cogtraj::run_eval_fold(cfg, eval_fold, eval_checkpoint);
            std::cout << "predictions: " << res.predictions_csv << '\n';
            std::cout << "test_samples: " << res.test_rows.size() << '\n';
        } else if (*report) {
            cogtraj::RunConfig cfg = resolve_config(report_flags);
            cogtraj::ReportResult res = cogtraj::run_report(cfg);
            std::cout << res.table;
            std::cout << "summary: " << res.summary_path << '\n';
        } else if (*predict) {
            nlohmann::json rows =
                cogtraj::run_predict(pr_checkpoint, pr_volume, pr_months, pr_permissive,
                                     pr_manifest);
            std::cout << rows.dump(2) << '\n';
        } else if (*all) {
            cogtraj::RunConfig cfg = resolve_config(all_flags);
            cogtraj::PhantomSpec spec = resolve_phantom_spec(all_spec_path, cfg.seed);
            cogtraj::RunAllResult res = cogtraj::run_all(cfg, spec);
            if (res.generated_data) std::cerr << "generated phantom dataset\n";
            std::cout << res.report.table;
            std::cout << "summary: " << res.report.summary_path << '\n';
        }
    } catch (const cogtraj::runtime_abort& e) {
        std::cerr << "abort: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
