#pragma once

// Pipeline stages behind the CLI subcommands: split, per-fold train/eval,
// cross-fold report, and single-volume prediction. Each stage writes its
// artifacts under the configured output directory and stays byte-identical
// across reruns with the same config and seeds.

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cogtraj/dataio.hpp"
#include "cogtraj/metrics.hpp"
#include "cogtraj/phantom.hpp"
#include "cogtraj/runconfig.hpp"

namespace cogtraj {

struct SplitResult {
    FoldBuild build;
    std::vector<std::pair<int, std::vector<std::size_t>>> counts;
    std::string plan_path;
};

SplitResult run_split(const RunConfig& cfg);

struct TrainFoldResult {
    std::string checkpoint_path;
    std::string log_path;
    std::vector<double> history;
};

TrainFoldResult run_train_fold(const RunConfig& cfg, std::size_t fold);

// test hook: given the dataset and the test-row indices, produce [N, S]
// normalized predictions in place of the checkpointed network
using PredictFn =
    std::function<Tensor<double>(const std::vector<SampleTuple>&, const std::vector<std::size_t>&)>;

struct EvalFoldResult {
    MetricsReport report;
    Tensor<double> predictions; // clipped to [0,1]
    Tensor<double> actuals;
    std::vector<int> intervals;
    std::vector<std::size_t> test_rows;
    std::string predictions_csv;
};

EvalFoldResult run_eval_fold(const RunConfig& cfg, std::size_t fold,
                             const std::string& checkpoint_override = "",
                             const PredictFn& oracle = {});

struct ReportResult {
    ReportSummary summary;
    std::string summary_path;
    std::string table;
};

ReportResult run_report(const RunConfig& cfg);

// one row of normalized scores per requested month
nlohmann::json run_predict(const std::string& checkpoint_path, const std::string& volume_path,
                           const std::vector<double>& months, bool permissive,
                           const std::string& manifest_path = "");

struct RunAllResult {
    ReportResult report;
    bool generated_data = false;
};

// gen-data (only when the dataset table is absent) -> split -> train x k ->
// eval x k -> report
RunAllResult run_all(const RunConfig& cfg, const PhantomSpec& gen_spec);

std::string fold_dir(const RunConfig& cfg, std::size_t fold);

} // namespace cogtraj
