#include "cogtraj/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "cogtraj/rng.hpp"

namespace fs = std::filesystem;

namespace cogtraj {

std::string fold_dir(const RunConfig& cfg, std::size_t fold) {
    return (fs::path(cfg.paths.out_dir) / ("fold" + std::to_string(fold))).string();
}

namespace {

constexpr std::size_t kEvalChunk = 8; // bounds tape memory during evaluation

std::vector<SampleTuple> load_samples(const RunConfig& cfg, const ScoreManifest& manifest) {
    return load_dataset(cfg.paths.dataset_csv, manifest, cfg.paths.volume_root);
}

FoldPlan load_plan(const RunConfig& cfg, std::size_t n_samples) {
    const std::string path = (fs::path(cfg.paths.out_dir) / "foldplan.json").string();
    FoldPlan plan = FoldPlan::load(path);
    if (plan.k != cfg.k_folds) {
        throw validation_error("fold plan k = " + std::to_string(plan.k) +
                               " does not match configured k_folds = " +
                               std::to_string(cfg.k_folds));
    }
    if (plan.assignment.size() != n_samples) {
        throw validation_error("fold plan covers " + std::to_string(plan.assignment.size()) +
                               " samples but dataset has " + std::to_string(n_samples));
    }
    return plan;
}

template <typename T>
Tensor<T> prepared_volume(const std::string& path) {
    return intensity_normalize(load_volume_as<T>(path));
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot write: " + path);
    f << j.dump(2) << '\n';
}

template <typename T>
TrainFoldResult train_fold_impl(const RunConfig& cfg, std::size_t fold) {
    const ScoreManifest manifest = ScoreManifest::load(cfg.paths.manifest);
    if (manifest.entries.size() != cfg.network.output_dim) {
        throw validation_error("manifest has " + std::to_string(manifest.entries.size()) +
                               " subscores but network outputs " +
                               std::to_string(cfg.network.output_dim));
    }
    const std::vector<SampleTuple> samples = load_samples(cfg, manifest);
    const FoldPlan plan = load_plan(cfg, samples.size());
    const FoldSplit split = fold_split(samples, plan, fold);
    if (split.train.empty()) {
        throw validation_error("fold " + std::to_string(fold) + " leaves no training samples");
    }

    const std::size_t out_dim = cfg.network.output_dim;
    std::vector<TrainSample<T>> train_set;
    train_set.reserve(split.train.size());
    for (std::size_t i : split.train) {
        const SampleTuple& s = samples[i];
        TrainSample<T> ts;
        ts.volume = prepared_volume<T>(s.volume_path);
        ts.months = static_cast<T>(s.interval_months);
        ts.targets = Tensor<T>({out_dim});
        for (std::size_t k = 0; k < out_dim; ++k) {
            ts.targets[k] = static_cast<T>(s.normalized_scores[k]);
        }
        train_set.push_back(std::move(ts));
    }

    Network<T> net = Network<T>::build(cfg.network, mix_seed(cfg.seed, 100 + fold));
    RmsProp<T> opt(net.parameters(), cfg.rmsprop);
    TrainPlan plan_fold = cfg.train;
    plan_fold.seed = mix_seed(cfg.seed, 200 + fold);
    plan_fold.batch_size = std::min(plan_fold.batch_size, train_set.size());
    plan_fold.deterministic = cfg.deterministic;

    const std::string dir = fold_dir(cfg, fold);
    fs::create_directories(dir);
    TrainFoldResult res;
    res.log_path = (fs::path(dir) / "train_log.jsonl").string();
    std::ofstream log(res.log_path);
    if (!log) throw io_error("cannot write train log: " + res.log_path);
    const std::string hash = cfg.config_hash();
    EpochCallback on_epoch = [&](const EpochStats& st) {
        nlohmann::json line;
        line["epoch"] = st.epoch;
        line["mean_loss"] = st.mean_loss;
        line["wall_seconds"] = st.wall_seconds;
        line["seed"] = plan_fold.seed;
        line["config_hash"] = hash;
        log << line.dump() << '\n';
        log.flush();
    };
    res.history = train(net, train_set, plan_fold, opt, on_epoch);

    res.checkpoint_path = (fs::path(dir) / "checkpoint.ctj").string();
    net.save(res.checkpoint_path);
    nlohmann::json meta;
    meta["fold"] = fold;
    meta["k_folds"] = cfg.k_folds;
    meta["seed"] = cfg.seed;
    meta["config_hash"] = hash;
    meta["history"] = res.history;
    write_json_file((fs::path(dir) / "fold_meta.json").string(), meta);
    return res;
}

// first top-level key whose value differs, for mismatch diagnostics
std::string first_config_mismatch(const nlohmann::json& a, const nlohmann::json& b) {
    for (auto it = a.begin(); it != a.end(); ++it) {
        if (!b.contains(it.key()) || b.at(it.key()) != it.value()) return it.key();
    }
    for (auto it = b.begin(); it != b.end(); ++it) {
        if (!a.contains(it.key())) return it.key();
    }
    return "";
}

template <typename T>
Tensor<double> predict_rows(const RunConfig& cfg, const std::string& checkpoint_path,
                            const std::vector<SampleTuple>& samples,
                            const std::vector<std::size_t>& rows) {
    Network<T> net = Network<T>::load(checkpoint_path);
    const std::string field =
        first_config_mismatch(net.config().to_json(), cfg.network.to_json());
    if (!field.empty()) {
        throw validation_error("checkpoint network config differs from run config in field '" +
                               field + "'");
    }
    const auto& in = cfg.network.input_shape;
    const std::size_t out_dim = cfg.network.output_dim;
    Tensor<double> predictions({rows.size(), out_dim});
    Rng rng(0); // eval mode draws nothing
    for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
        const std::size_t b = std::min(kEvalChunk, rows.size() - start);
        Tensor<T> volumes({b, in[0], in[1], in[2], in[3]});
        Tensor<T> months({b, 1});
        const std::size_t vol_len = in[0] * in[1] * in[2] * in[3];
        for (std::size_t r = 0; r < b; ++r) {
            const SampleTuple& s = samples[rows[start + r]];
            Tensor<T> vol = prepared_volume<T>(s.volume_path);
            if (vol.numel() != vol_len) {
                throw shape_error("volume " + s.volume_path + " has shape " +
                                  shape_str(vol.shape()) + ", config expects " +
                                  shape_str({1, in[1], in[2], in[3]}));
            }
            std::copy(vol.data(), vol.data() + vol_len, volumes.data() + r * vol_len);
            months[r] = static_cast<T>(s.interval_months);
        }
        ForwardResult<T> fwd = net.forward(volumes, months, Mode::eval, rng);
        for (std::size_t r = 0; r < b; ++r) {
            for (std::size_t k = 0; k < out_dim; ++k) {
                predictions(start + r, k) =
                    std::clamp(static_cast<double>(fwd.predictions(r, k)), 0.0, 1.0);
            }
        }
    }
    return predictions;
}

} // namespace

SplitResult run_split(const RunConfig& cfg) {
    const ScoreManifest manifest = ScoreManifest::load(cfg.paths.manifest);
    const std::vector<SampleTuple> samples = load_samples(cfg, manifest);
    FoldBuild build = build_stratified_folds(samples, cfg.k_folds, cfg.seed,
                                             cfg.group_by_subject);
    fs::create_directories(cfg.paths.out_dir);
    cfg.echo_effective(cfg.paths.out_dir);
    SplitResult res;
    res.plan_path = (fs::path(cfg.paths.out_dir) / "foldplan.json").string();
    build.plan.save(res.plan_path);
    res.counts = fold_interval_counts(samples, build.plan);
    res.build = std::move(build);
    return res;
}

TrainFoldResult run_train_fold(const RunConfig& cfg, std::size_t fold) {
    if (fold >= cfg.k_folds) {
        throw validation_error("fold " + std::to_string(fold) + " outside [0, " +
                               std::to_string(cfg.k_folds) + ")");
    }
    if (cfg.precision == "float64") return train_fold_impl<double>(cfg, fold);
    return train_fold_impl<float>(cfg, fold);
}

EvalFoldResult run_eval_fold(const RunConfig& cfg, std::size_t fold,
                             const std::string& checkpoint_override, const PredictFn& oracle) {
    if (fold >= cfg.k_folds) {
        throw validation_error("fold " + std::to_string(fold) + " outside [0, " +
                               std::to_string(cfg.k_folds) + ")");
    }
    const ScoreManifest manifest = ScoreManifest::load(cfg.paths.manifest);
    if (manifest.entries.size() != cfg.network.output_dim) {
        throw validation_error("manifest has " + std::to_string(manifest.entries.size()) +
                               " subscores but network outputs " +
                               std::to_string(cfg.network.output_dim));
    }
    const std::vector<SampleTuple> samples = load_samples(cfg, manifest);
    const FoldPlan plan = load_plan(cfg, samples.size());
    const FoldSplit split = fold_split(samples, plan, fold);
    if (split.test.empty()) {
        throw validation_error("fold " + std::to_string(fold) + " has no test samples");
    }

    EvalFoldResult res;
    res.test_rows = split.test;
    const std::size_t out_dim = cfg.network.output_dim;
    if (oracle) {
        res.predictions = oracle(samples, split.test);
        std::vector<std::size_t> want{split.test.size(), out_dim};
        if (res.predictions.shape() != want) {
            throw shape_error("oracle predictions " + shape_str(res.predictions.shape()) +
                              ", expected " + shape_str(want));
        }
    } else {
        const std::string ckpt =
            checkpoint_override.empty()
                ? (fs::path(fold_dir(cfg, fold)) / "checkpoint.ctj").string()
                : checkpoint_override;
        // dtype recorded in the checkpoint decides the compute precision
        const nlohmann::json meta = peek_checkpoint_meta(ckpt);
        const std::string dtype = meta.value("dtype", "float32");
        res.predictions = dtype == "float64"
                              ? predict_rows<double>(cfg, ckpt, samples, split.test)
                              : predict_rows<float>(cfg, ckpt, samples, split.test);
    }

    res.actuals = Tensor<double>({split.test.size(), out_dim});
    res.intervals.resize(split.test.size());
    for (std::size_t r = 0; r < split.test.size(); ++r) {
        const SampleTuple& s = samples[split.test[r]];
        res.intervals[r] = s.interval_months;
        for (std::size_t k = 0; k < out_dim; ++k) res.actuals(r, k) = s.normalized_scores[k];
    }

    const std::string dir = fold_dir(cfg, fold);
    fs::create_directories(dir);
    res.predictions_csv = (fs::path(dir) / "predictions.csv").string();
    {
        std::ofstream f(res.predictions_csv);
        if (!f) throw io_error("cannot write predictions: " + res.predictions_csv);
        f << "row,subject_id,interval_months";
        for (const auto& e : manifest.entries) f << ",pred_" << e.name;
        for (const auto& e : manifest.entries) f << ",actual_" << e.name;
        f << '\n';
        f.precision(17);
        for (std::size_t r = 0; r < split.test.size(); ++r) {
            const SampleTuple& s = samples[split.test[r]];
            f << split.test[r] << ',' << s.subject_id << ',' << s.interval_months;
            for (std::size_t k = 0; k < out_dim; ++k) f << ',' << res.predictions(r, k);
            for (std::size_t k = 0; k < out_dim; ++k) f << ',' << res.actuals(r, k);
            f << '\n';
        }
    }

    const std::vector<std::size_t> fold_ids(split.test.size(), fold);
    res.report = build_report(res.predictions, res.actuals, res.intervals, fold_ids, manifest);
    write_subscore_csv((fs::path(dir) / "rmse_by_subscore_interval.csv").string(),
                       res.report.subscore_cells);
    write_aggregate_csv((fs::path(dir) / "aggregate_by_interval.csv").string(),
                        res.report.aggregate_cells);
    nlohmann::json meta;
    meta["fold"] = fold;
    meta["config_hash"] = cfg.config_hash();
    meta["test_count"] = split.test.size();
    const std::vector<std::string> leaks = subject_leaks(samples, split);
    meta["subject_leaks"] = leaks;
    write_json_file((fs::path(dir) / "eval_meta.json").string(), meta);
    return res;
}

ReportResult run_report(const RunConfig& cfg) {
    std::vector<std::size_t> missing;
    MetricsReport merged;
    std::string want_hash;
    for (std::size_t fold = 0; fold < cfg.k_folds; ++fold) {
        const fs::path dir(fold_dir(cfg, fold));
        const fs::path sub = dir / "rmse_by_subscore_interval.csv";
        const fs::path agg = dir / "aggregate_by_interval.csv";
        const fs::path meta_path = dir / "fold_meta.json";
        if (!fs::exists(sub) || !fs::exists(agg)) {
            missing.push_back(fold);
            continue;
        }
        if (fs::exists(meta_path)) {
            const nlohmann::json meta = load_json_file(meta_path.string(), "fold metadata");
            const std::string h = meta.value("config_hash", "");
            if (want_hash.empty()) {
                want_hash = h;
            } else if (h != want_hash) {
                throw validation_error("fold " + std::to_string(fold) + " config hash " + h +
                                       " differs from " + want_hash +
                                       "; refusing to merge mixed runs");
            }
        }
        for (auto& c : read_subscore_csv(sub.string())) merged.subscore_cells.push_back(c);
        for (auto& c : read_aggregate_csv(agg.string())) merged.aggregate_cells.push_back(c);
    }
    if (!missing.empty()) {
        std::string list;
        for (std::size_t f : missing) list += (list.empty() ? "" : ", ") + std::to_string(f);
        throw validation_error("missing fold outputs for fold(s): " + list);
    }
    if (!want_hash.empty() && want_hash != cfg.config_hash()) {
        throw validation_error("fold outputs were produced with config hash " + want_hash +
                               " but current config hashes to " + cfg.config_hash());
    }

    ReportResult res;
    res.summary = summarize_report(merged);
    nlohmann::json metadata;
    metadata["config_hash"] = cfg.config_hash();
    metadata["seed"] = cfg.seed;
    metadata["k_folds"] = cfg.k_folds;
    const nlohmann::json j = summary_to_json(res.summary, metadata);
    res.summary_path = (fs::path(cfg.paths.out_dir) / "summary.json").string();
    write_json_file(res.summary_path, j);
    res.table = format_report_table(res.summary);
    return res;
}

nlohmann::json run_predict(const std::string& checkpoint_path, const std::string& volume_path,
                           const std::vector<double>& months, bool permissive,
                           const std::string& manifest_path) {
    if (months.empty()) throw validation_error("predict: no months requested");
    const nlohmann::json meta = peek_checkpoint_meta(checkpoint_path);
    const std::string dtype = meta.value("dtype", "float32");

    auto run = [&](auto tag) -> nlohmann::json {
        using T = decltype(tag);
        Network<T> net = Network<T>::load(checkpoint_path);
        const NetworkConfig& nc = net.config();
        std::vector<double> use_months;
        for (double m : months) {
            if (m >= 0.0 && m <= nc.time_scale) {
                use_months.push_back(m);
            } else if (permissive) {
                use_months.push_back(std::clamp(m, 0.0, nc.time_scale));
            } else {
                throw validation_error("month " + std::to_string(m) + " outside [0, " +
                                       std::to_string(nc.time_scale) + "]");
            }
        }
        Tensor<T> vol = prepared_volume<T>(volume_path);
        const auto& in = nc.input_shape;
        std::vector<std::size_t> want{1, in[1], in[2], in[3]};
        if (vol.shape() != want) {
            throw shape_error("volume " + volume_path + " has shape " + shape_str(vol.shape()) +
                              ", checkpoint expects " + shape_str(want));
        }
        const std::size_t b = use_months.size();
        Tensor<T> volumes({b, in[0], in[1], in[2], in[3]});
        Tensor<T> month_col({b, 1});
        for (std::size_t r = 0; r < b; ++r) {
            std::copy(vol.data(), vol.data() + vol.numel(), volumes.data() + r * vol.numel());
            month_col[r] = static_cast<T>(use_months[r]);
        }
        Rng rng(0);
        ForwardResult<T> fwd = net.forward(volumes, month_col, Mode::eval, rng);
        ScoreManifest manifest;
        const bool have_manifest = !manifest_path.empty();
        if (have_manifest) manifest = ScoreManifest::load(manifest_path);
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t r = 0; r < b; ++r) {
            std::vector<double> norm(nc.output_dim);
            for (std::size_t k = 0; k < nc.output_dim; ++k) {
                norm[k] = std::clamp(static_cast<double>(fwd.predictions(r, k)), 0.0, 1.0);
            }
            nlohmann::json row;
            row["months"] = use_months[r];
            row["normalized_scores"] = norm;
            if (have_manifest) {
                if (manifest.entries.size() != nc.output_dim) {
                    throw validation_error("manifest has " +
                                           std::to_string(manifest.entries.size()) +
                                           " subscores but checkpoint outputs " +
                                           std::to_string(nc.output_dim));
                }
                row["raw_scores"] = denormalize_scores(norm, manifest);
            }
            rows.push_back(std::move(row));
        }
        return rows;
    };
    return dtype == "float64" ? run(double{}) : run(float{});
}

RunAllResult run_all(const RunConfig& cfg, const PhantomSpec& gen_spec) {
    RunAllResult res;
    if (!fs::exists(cfg.paths.dataset_csv)) {
        generate(gen_spec, fs::path(cfg.paths.dataset_csv).parent_path().string());
        res.generated_data = true;
    }
    run_split(cfg);
    for (std::size_t fold = 0; fold < cfg.k_folds; ++fold) {
        run_train_fold(cfg, fold);
        run_eval_fold(cfg, fold);
    }
    res.report = run_report(cfg);
    return res;
}

} // namespace cogtraj
