#include "cogtraj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace cogtraj {

double rmse(const std::vector<double>& pred, const std::vector<double>& actual) {
    if (pred.empty()) throw param_error("rmse: empty vectors");
    if (pred.size() != actual.size()) {
        throw shape_error("rmse: length " + std::to_string(pred.size()) + " vs " +
                          std::to_string(actual.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - actual[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

PearsonResult pearson(const std::vector<double>& pred, const std::vector<double>& actual) {
    if (pred.size() != actual.size()) {
        throw shape_error("pearson: length " + std::to_string(pred.size()) + " vs " +
                          std::to_string(actual.size()));
    }
    if (pred.size() < 2) throw param_error("pearson: needs at least 2 values");
    const double n = static_cast<double>(pred.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        mx += pred[i];
        my += actual[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double dx = pred[i] - mx, dy = actual[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    PearsonResult r;
    if (sxx / n < 1e-24 || syy / n < 1e-24) return r; // undefined
    r.r = sxy / std::sqrt(sxx * syy);
    r.r = std::clamp(r.r, -1.0, 1.0);
    r.defined = true;
    return r;
}

double aggregate_score(const std::vector<double>& normalized, const ScoreManifest& m) {
    if (normalized.size() != m.entries.size()) {
        throw validation_error("aggregate_score: got " + std::to_string(normalized.size()) +
                               " values for a " + std::to_string(m.entries.size()) +
                               "-entry manifest");
    }
    double raw_sum = 0.0, max_sum = 0.0;
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        const ScoreEntry& e = m.entries[i];
        if (!std::isfinite(normalized[i])) {
            throw validation_error("aggregate_score: non-finite subscore '" + e.name + "'");
        }
        raw_sum += e.raw_min + normalized[i] * (e.raw_max - e.raw_min);
        max_sum += e.raw_max;
    }
    if (max_sum <= 0.0) {
        throw validation_error("aggregate_score: manifest max sum " + std::to_string(max_sum) +
                               " must be > 0");
    }
    return raw_sum / max_sum;
}

Summary summarize(const std::vector<double>& values) {
    if (values.empty()) throw param_error("summarize: empty input");
    Summary s;
    s.n = values.size();
    double acc = 0.0;
    for (double v : values) acc += v;
    s.mean = acc / static_cast<double>(s.n);
    if (s.n == 1) {
        s.degenerate = true;
        return s; // SE reported as 0
    }
    double sq = 0.0;
    for (double v : values) {
        const double d = v - s.mean;
        sq += d * d;
    }
    const double sample_var = sq / static_cast<double>(s.n - 1);
    s.standard_error = std::sqrt(sample_var) / std::sqrt(static_cast<double>(s.n));
    return s;
}

MetricsReport build_report(const Tensor<double>& predictions, const Tensor<double>& actuals,
                           const std::vector<int>& intervals,
                           const std::vector<std::size_t>& fold_ids, const ScoreManifest& m) {
    m.validate();
    check_same_shape("build_report", predictions, actuals);
    if (predictions.rank() != 2) {
        throw shape_error("build_report: predictions must be [N, S], got " +
                          shape_str(predictions.shape()));
    }
    const std::size_t n = predictions.extent(0);
    const std::size_t s_count = predictions.extent(1);
    if (s_count != m.entries.size()) {
        throw shape_error("build_report: " + std::to_string(s_count) +
                          " score columns for a " + std::to_string(m.entries.size()) +
                          "-entry manifest");
    }
    if (intervals.size() != n || fold_ids.size() != n) {
        throw shape_error("build_report: intervals/fold_ids lengths must equal row count " +
                          std::to_string(n));
    }

    // group rows by (interval, fold), ascending
    std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
        groups[{intervals[i], fold_ids[i]}].push_back(i);
    }

    MetricsReport rep;
    std::vector<double> col_p, col_a;
    for (const auto& [key, rows] : groups) {
        const auto [interval, fold] = key;
        for (std::size_t si = 0; si < s_count; ++si) {
            col_p.clear();
            col_a.clear();
            for (std::size_t r : rows) {
                col_p.push_back(predictions(r, si));
                col_a.push_back(actuals(r, si));
            }
            SubscoreCell cell;
            cell.subscore = si;
            cell.name = m.entries[si].name;
            cell.interval = interval;
            cell.fold = fold;
            cell.rmse = rmse(col_p, col_a);
            cell.count = rows.size();
            rep.subscore_cells.push_back(std::move(cell));
        }
        std::vector<double> agg_p, agg_a, row_p(s_count), row_a(s_count);
        for (std::size_t r : rows) {
            for (std::size_t si = 0; si < s_count; ++si) {
                row_p[si] = predictions(r, si);
                row_a[si] = actuals(r, si);
            }
            agg_p.push_back(aggregate_score(row_p, m));
            agg_a.push_back(aggregate_score(row_a, m));
        }
        AggregateCell cell;
        cell.interval = interval;
        cell.fold = fold;
        cell.rmse = rmse(agg_p, agg_a);
        cell.count = rows.size();
        if (rows.size() >= 2) {
            const PearsonResult pr = pearson(agg_p, agg_a);
            cell.pearson = pr.r;
            cell.pearson_defined = pr.defined;
        }
        rep.aggregate_cells.push_back(std::move(cell));
    }
    return rep;
}

namespace {

std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_num(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw validation_error(where + ": cannot parse number '" + s + "'");
    }
}

void expect_header(const std::string& got, const std::string& want, const std::string& path) {
    std::string g = got;
    if (!g.empty() && g.back() == '\r') g.pop_back();
    if (g != want) {
        throw validation_error(path + ": header '" + g + "', expected '" + want + "'");
    }
}

} // namespace

void write_subscore_csv(const std::string& path, const std::vector<SubscoreCell>& cells) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << "subscore,interval,fold,rmse,count\n";
    f.precision(17);
    for (const auto& c : cells) {
        f << c.name << ',' << c.interval << ',' << c.fold << ',' << c.rmse << ',' << c.count
          << '\n';
    }
    if (!f) throw io_error("failed writing: " + path);
}

std::vector<SubscoreCell> read_subscore_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw validation_error(path + ": empty file");
    expect_header(line, "subscore,interval,fold,rmse,count", path);
    std::vector<SubscoreCell> cells;
    std::size_t line_no = 1;
    std::map<std::string, std::size_t> name_index;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const auto fields = split_row(line);
        if (fields.size() != 5) throw validation_error(where + ": expected 5 columns");
        SubscoreCell c;
        c.name = fields[0];
        c.subscore = name_index.try_emplace(c.name, name_index.size()).first->second;
        c.interval = static_cast<int>(parse_num(fields[1], where));
        c.fold = static_cast<std::size_t>(parse_num(fields[2], where));
        c.rmse = parse_num(fields[3], where);
        c.count = static_cast<std::size_t>(parse_num(fields[4], where));
        cells.push_back(std::move(c));
    }
    return cells;
}

void write_aggregate_csv(const std::string& path, const std::vector<AggregateCell>& cells) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << "interval,fold,rmse,pearson,defined,count\n";
    f.precision(17);
    for (const auto& c : cells) {
        f << c.interval << ',' << c.fold << ',' << c.rmse << ',';
        if (c.pearson_defined) {
            f << c.pearson;
        } else {
            f << "nan"; // placeholder; the defined flag is authoritative
        }
        f << ',' << (c.pearson_defined ? 1 : 0) << ',' << c.count << '\n';
    }
    if (!f) throw io_error("failed writing: " + path);
}

std::vector<AggregateCell> read_aggregate_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw validation_error(path + ": empty file");
    expect_header(line, "interval,fold,rmse,pearson,defined,count", path);
    std::vector<AggregateCell> cells;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const auto fields = split_row(line);
        if (fields.size() != 6) throw validation_error(where + ": expected 6 columns");
        AggregateCell c;
        c.interval = static_cast<int>(parse_num(fields[0], where));
        c.fold = static_cast<std::size_t>(parse_num(fields[1], where));
        c.rmse = parse_num(fields[2], where);
        c.pearson_defined = fields[4] == "1";
        c.pearson = c.pearson_defined ? parse_num(fields[3], where) : 0.0;
        c.count = static_cast<std::size_t>(parse_num(fields[5], where));
        cells.push_back(std::move(c));
    }
    return cells;
}

ReportSummary summarize_report(const MetricsReport& report) {
    ReportSummary s;
    std::map<std::pair<std::string, int>, std::vector<double>> by_sub;
    std::vector<double> all_sub;
    for (const auto& c : report.subscore_cells) {
        by_sub[{c.name, c.interval}].push_back(c.rmse);
        all_sub.push_back(c.rmse);
    }
    for (const auto& [key, vals] : by_sub) s.subscore_by_interval[key] = summarize(vals);
    if (!all_sub.empty()) s.overall_subscore_rmse = summarize(all_sub);

    std::map<int, std::vector<double>> agg_rmse, agg_pearson;
    std::vector<double> all_rmse, all_pearson;
    for (const auto& c : report.aggregate_cells) {
        agg_rmse[c.interval].push_back(c.rmse);
        all_rmse.push_back(c.rmse);
        if (c.pearson_defined) {
            agg_pearson[c.interval].push_back(c.pearson);
            all_pearson.push_back(c.pearson);
        } else {
            ++s.undefined_pearson_cells;
        }
    }
    for (const auto& [interval, vals] : agg_rmse) {
        s.aggregate_rmse_by_interval[interval] = summarize(vals);
    }
    for (const auto& [interval, vals] : agg_pearson) {
        s.aggregate_pearson_by_interval[interval] = summarize(vals);
    }
    if (!all_rmse.empty()) s.overall_aggregate_rmse = summarize(all_rmse);
    if (!all_pearson.empty()) s.overall_aggregate_pearson = summarize(all_pearson);
    return s;
}

namespace {

nlohmann::json summary_json(const Summary& s) {
    nlohmann::json j;
    j["mean"] = s.mean;
    j["standard_error"] = s.standard_error;
    j["n"] = s.n;
    if (s.degenerate) j["degenerate"] = true;
    return j;
}

} // namespace

nlohmann::json summary_to_json(const ReportSummary& s, const nlohmann::json& metadata) {
    nlohmann::json j;
    j["metadata"] = metadata;
    j["metadata"]["error_bars"] = "across folds";
    auto& sub = j["per_subscore_interval"];
    sub = nlohmann::json::object();
    for (const auto& [key, val] : s.subscore_by_interval) {
        sub[key.first][std::to_string(key.second)] = summary_json(val);
    }
    auto& agg = j["per_interval_aggregate"];
    agg = nlohmann::json::object();
    for (const auto& [interval, val] : s.aggregate_rmse_by_interval) {
        agg[std::to_string(interval)]["rmse"] = summary_json(val);
    }
    for (const auto& [interval, val] : s.aggregate_pearson_by_interval) {
        agg[std::to_string(interval)]["pearson"] = summary_json(val);
    }
    j["overall"]["subscore_rmse"] = summary_json(s.overall_subscore_rmse);
    j["overall"]["aggregate_rmse"] = summary_json(s.overall_aggregate_rmse);
    j["overall"]["aggregate_pearson"] = summary_json(s.overall_aggregate_pearson);
    j["overall"]["undefined_pearson_cells"] = s.undefined_pearson_cells;
    return j;
}

std::string format_report_table(const ReportSummary& s) {
    std::set<int> interval_set;
    std::set<std::string> names_set;
    for (const auto& [key, val] : s.subscore_by_interval) {
        names_set.insert(key.first);
        interval_set.insert(key.second);
    }
    for (const auto& [interval, val] : s.aggregate_rmse_by_interval) interval_set.insert(interval);
    const std::vector<int> intervals(interval_set.begin(), interval_set.end());
    const std::vector<std::string> names(names_set.begin(), names_set.end());

    std::size_t label_w = std::string("aggregate pearson").size();
    for (const auto& n : names) label_w = std::max(label_w, n.size());
    const int cell_w = 16;

    std::ostringstream out;
    auto cell = [&](const Summary& v) {
        std::ostringstream c;
        c << std::fixed << std::setprecision(3) << v.mean << " +/- " << v.standard_error;
        return c.str();
    };
    out << std::left << std::setw(static_cast<int>(label_w) + 2) << "rmse (mean +/- se)";
    for (int iv : intervals) {
        out << std::right << std::setw(cell_w) << ("m" + std::to_string(iv));
    }
    out << '\n';
    for (const auto& n : names) {
        out << std::left << std::setw(static_cast<int>(label_w) + 2) << n;
        for (int iv : intervals) {
            auto it = s.subscore_by_interval.find({n, iv});
            out << std::right << std::setw(cell_w)
                << (it == s.subscore_by_interval.end() ? std::string("-") : cell(it->second));
        }
        out << '\n';
    }
    out << std::left << std::setw(static_cast<int>(label_w) + 2) << "aggregate rmse";
    for (int iv : intervals) {
        auto it = s.aggregate_rmse_by_interval.find(iv);
        out << std::right << std::setw(cell_w)
            << (it == s.aggregate_rmse_by_interval.end() ? std::string("-") : cell(it->second));
    }
    out << '\n';
    out << std::left << std::setw(static_cast<int>(label_w) + 2) << "aggregate pearson";
    for (int iv : intervals) {
        auto it = s.aggregate_pearson_by_interval.find(iv);
        out << std::right << std::setw(cell_w)
            << (it == s.aggregate_pearson_by_interval.end() ? std::string("-")
                                                            : cell(it->second));
    }
    out << '\n';
    return out.str();
}

} // namespace cogtraj
