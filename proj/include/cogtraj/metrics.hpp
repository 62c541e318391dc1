#pragma once

// RMSE / Pearson / aggregate-score metrics and the per-fold report:
// 13 subscore RMSE cells per (interval, fold), aggregate RMSE and Pearson
// per (interval, fold), and fold-level mean / standard-error roll-ups.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "cogtraj/dataio.hpp"
#include "cogtraj/tensor.hpp"

namespace cogtraj {

double rmse(const std::vector<double>& pred, const std::vector<double>& actual);

struct PearsonResult {
    double r = 0.0;
    bool defined = false;
};

// undefined (never NaN) when either sample variance is below 1e-24
PearsonResult pearson(const std::vector<double>& pred, const std::vector<double>& actual);

// raw_i = min_i + s_i * (max_i - min_i); result = sum(raw) / sum(max)
double aggregate_score(const std::vector<double>& normalized, const ScoreManifest& m);

struct Summary {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t n = 0;
    bool degenerate = false; // n == 1: SE reported as 0
};

// mean and standard error = sample std (n-1 denominator) / sqrt(n)
Summary summarize(const std::vector<double>& values);

struct SubscoreCell {
    std::size_t subscore = 0; // manifest index
    std::string name;
    int interval = 0;
    std::size_t fold = 0;
    double rmse = 0.0;
    std::size_t count = 0;
};

struct AggregateCell {
    int interval = 0;
    std::size_t fold = 0;
    double rmse = 0.0;
    double pearson = 0.0;
    bool pearson_defined = false;
    std::size_t count = 0;
};

struct MetricsReport {
    std::vector<SubscoreCell> subscore_cells;
    std::vector<AggregateCell> aggregate_cells;
};

// groups rows by (interval, fold): per-subscore RMSE, aggregate RMSE and
// Pearson per group; Pearson of a <2-sample group is recorded undefined
MetricsReport build_report(const Tensor<double>& predictions, const Tensor<double>& actuals,
                           const std::vector<int>& intervals,
                           const std::vector<std::size_t>& fold_ids, const ScoreManifest& m);

void write_subscore_csv(const std::string& path, const std::vector<SubscoreCell>& cells);
std::vector<SubscoreCell> read_subscore_csv(const std::string& path);
void write_aggregate_csv(const std::string& path, const std::vector<AggregateCell>& cells);
std::vector<AggregateCell> read_aggregate_csv(const std::string& path);

struct ReportSummary {
    // across-fold roll-ups (error bars are across folds)
    std::map<std::pair<std::string, int>, Summary> subscore_by_interval;
    std::map<int, Summary> aggregate_rmse_by_interval;
    std::map<int, Summary> aggregate_pearson_by_interval; // defined cells only
    Summary overall_subscore_rmse;      // across every (subscore, interval, fold) cell
    Summary overall_aggregate_rmse;     // across every (interval, fold) cell
    Summary overall_aggregate_pearson;  // across defined cells
    std::size_t undefined_pearson_cells = 0;
};

ReportSummary summarize_report(const MetricsReport& report);

nlohmann::json summary_to_json(const ReportSummary& s, const nlohmann::json& metadata);

// aligned mean +/- SE table: one row per subscore, one column per interval,
// then aggregate RMSE and Pearson rows
std::string format_report_table(const ReportSummary& s);

} // namespace cogtraj
