#include "cogtraj/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "cogtraj/rng.hpp"

namespace fs = std::filesystem;

namespace cogtraj {

void ScoreManifest::validate() const {
    if (entries.empty()) throw validation_error("score manifest has no entries");
    std::set<std::string> names;
    for (const auto& e : entries) {
        if (e.name.empty()) throw validation_error("score manifest entry with empty name");
        if (!names.insert(e.name).second) {
            throw validation_error("duplicate subscore name '" + e.name + "' in manifest");
        }
        if (!(e.raw_min < e.raw_max)) {
            throw validation_error("subscore '" + e.name + "' needs raw_min < raw_max, got [" +
                                   std::to_string(e.raw_min) + ", " + std::to_string(e.raw_max) +
                                   "]");
        }
    }
}

nlohmann::json ScoreManifest::to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries) {
        j["entries"].push_back({{"name", e.name}, {"raw_min", e.raw_min}, {"raw_max", e.raw_max}});
    }
    return j;
}

ScoreManifest ScoreManifest::from_json(const nlohmann::json& j) {
    ScoreManifest m;
    m.version = j.value("version", "1");
    for (const auto& e : j.at("entries")) {
        m.entries.push_back({e.at("name").get<std::string>(), e.at("raw_min").get<double>(),
                             e.at("raw_max").get<double>()});
    }
    m.validate();
    return m;
}

ScoreManifest ScoreManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open score manifest: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("score manifest " + path + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void ScoreManifest::save(const std::string& path) const {
    validate();
    std::ofstream f(path);
    if (!f) throw io_error("cannot open score manifest for writing: " + path);
    f << to_json().dump(2) << '\n';
}

std::vector<double> normalize_scores(const std::vector<double>& raw, const ScoreManifest& m,
                                     RangePolicy policy) {
    if (raw.size() != m.entries.size()) {
        throw validation_error("got " + std::to_string(raw.size()) + " raw scores for a " +
                               std::to_string(m.entries.size()) + "-entry manifest");
    }
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const ScoreEntry& e = m.entries[i];
        double v = raw[i];
        if (v < e.raw_min || v > e.raw_max) {
            if (policy == RangePolicy::strict) {
                throw validation_error("subscore '" + e.name + "' value " + std::to_string(v) +
                                       " outside [" + std::to_string(e.raw_min) + ", " +
                                       std::to_string(e.raw_max) + "]");
            }
            v = std::clamp(v, e.raw_min, e.raw_max);
        }
        out[i] = (v - e.raw_min) / (e.raw_max - e.raw_min);
    }
    return out;
}

std::vector<double> denormalize_scores(const std::vector<double>& normalized,
                                       const ScoreManifest& m) {
    if (normalized.size() != m.entries.size()) {
        throw validation_error("got " + std::to_string(normalized.size()) +
                               " normalized scores for a " + std::to_string(m.entries.size()) +
                               "-entry manifest");
    }
    std::vector<double> out(normalized.size());
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        const ScoreEntry& e = m.entries[i];
        out[i] = e.raw_min + normalized[i] * (e.raw_max - e.raw_min);
    }
    return out;
}

namespace {

std::string sidecar_path(const std::string& path) { return path + ".json"; }

VolumeMeta read_sidecar(const std::string& vol_path) {
    const std::string sp = sidecar_path(vol_path);
    std::ifstream f(sp);
    if (!f) throw io_error("missing volume sidecar: " + sp);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("volume sidecar " + sp + " is not valid JSON: " + e.what());
    }
    VolumeMeta meta;
    try {
        j.at("dims").get_to(meta.dims);
        if (j.contains("voxel_mm")) j.at("voxel_mm").get_to(meta.voxel_mm);
        meta.subject_id = j.value("subject_id", "");
    } catch (const nlohmann::json::exception& e) {
        throw io_error("volume sidecar " + sp + " malformed: " + e.what());
    }
    for (std::size_t d : meta.dims) {
        if (d == 0) throw io_error("volume sidecar " + sp + " has a zero dim");
    }
    return meta;
}

// .vol payloads are little-endian float32; this artifact targets
// little-endian hosts, asserted here rather than byte-swapped.
static_assert(std::endian::native == std::endian::little,
              "volume io assumes a little-endian host");

} // namespace

Tensor<float> load_volume(const std::string& path, VolumeMeta* meta_out) {
    VolumeMeta meta = read_sidecar(path);
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw io_error("cannot open volume: " + path);
    const std::uint64_t bytes = static_cast<std::uint64_t>(f.tellg());
    const std::uint64_t voxels =
        static_cast<std::uint64_t>(meta.dims[0]) * meta.dims[1] * meta.dims[2];
    if (bytes != voxels * sizeof(float)) {
        throw io_error("volume " + path + " payload is " + std::to_string(bytes) +
                       " bytes but sidecar dims imply " + std::to_string(voxels * sizeof(float)));
    }
    f.seekg(0);
    Tensor<float> vol({1, meta.dims[0], meta.dims[1], meta.dims[2]});
    if (!f.read(reinterpret_cast<char*>(vol.data()),
                static_cast<std::streamsize>(voxels * sizeof(float)))) {
        throw io_error("failed reading volume payload: " + path);
    }
    for (std::size_t i = 0; i < vol.numel(); ++i) {
        if (!std::isfinite(vol[i])) {
            throw io_error("volume " + path + " contains a non-finite voxel at flat index " +
                           std::to_string(i));
        }
    }
    if (meta_out) *meta_out = meta;
    return vol;
}

void write_volume(const std::string& path, const Tensor<float>& volume, const VolumeMeta& meta) {
    if (volume.rank() != 4 || volume.extent(0) != 1) {
        throw shape_error("write_volume expects [1,D,H,W], got " + shape_str(volume.shape()));
    }
    VolumeMeta m = meta;
    m.dims = {volume.extent(1), volume.extent(2), volume.extent(3)};
    for (std::size_t i = 0; i < volume.numel(); ++i) {
        if (!std::isfinite(volume[i])) {
            throw io_error("refusing to write non-finite voxel to " + path);
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open volume for writing: " + path);
    f.write(reinterpret_cast<const char*>(volume.data()),
            static_cast<std::streamsize>(volume.numel() * sizeof(float)));
    if (!f) throw io_error("failed writing volume payload: " + path);
    nlohmann::json j;
    j["dims"] = m.dims;
    j["voxel_mm"] = m.voxel_mm;
    j["subject_id"] = m.subject_id;
    std::ofstream sf(sidecar_path(path));
    if (!sf) throw io_error("cannot open sidecar for writing: " + sidecar_path(path));
    sf << j.dump(2) << '\n';
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
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

double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw validation_error(where + ": cannot parse number '" + s + "'");
    }
}

} // namespace

std::vector<SampleTuple> load_dataset(const std::string& table_path, const ScoreManifest& m,
                                      const std::string& volume_root, RangePolicy policy) {
    m.validate();
    std::ifstream f(table_path);
    if (!f) throw io_error("cannot open dataset table: " + table_path);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(f, line)) return {}; // empty table -> empty dataset
    ++line_no;
    const std::vector<std::string> header = split_csv_row(line);
    const std::size_t want_cols = 3 + m.entries.size();
    const std::string where0 = table_path + ":" + std::to_string(line_no);
    if (header.size() != want_cols) {
        throw validation_error(where0 + ": header has " + std::to_string(header.size()) +
                               " columns, expected " + std::to_string(want_cols));
    }
    const char* fixed[3] = {"subject_id", "volume_path", "interval_months"};
    for (int i = 0; i < 3; ++i) {
        if (header[i] != fixed[i]) {
            throw validation_error(where0 + ": column " + std::to_string(i + 1) + " is '" +
                                   header[i] + "', expected '" + fixed[i] + "'");
        }
    }
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        if (header[3 + i] != m.entries[i].name) {
            throw validation_error(where0 + ": score column " + std::to_string(i + 1) + " is '" +
                                   header[3 + i] + "', expected manifest entry '" +
                                   m.entries[i].name + "'");
        }
    }

    std::vector<SampleTuple> samples;
    std::set<std::tuple<std::string, std::string, int>> seen;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = table_path + ":" + std::to_string(line_no);
        const std::vector<std::string> fields = split_csv_row(line);
        if (fields.size() != want_cols) {
            throw validation_error(where + ": row has " + std::to_string(fields.size()) +
                                   " columns, expected " + std::to_string(want_cols));
        }
        SampleTuple s;
        s.subject_id = fields[0];
        if (s.subject_id.empty()) throw validation_error(where + ": empty subject_id");
        try {
            std::size_t pos = 0;
            s.interval_months = std::stoi(fields[2], &pos);
            if (pos != fields[2].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw validation_error(where + ": cannot parse interval_months '" + fields[2] + "'");
        }
        if (!interval_on_grid(s.interval_months)) {
            throw validation_error(where + ": interval " + std::to_string(s.interval_months) +
                                   " is not a multiple of 6 in [0, 36]");
        }
        fs::path vp(fields[1]);
        s.volume_path = vp.is_absolute() ? vp.string() : (fs::path(volume_root) / vp).string();
        if (!fs::exists(s.volume_path)) {
            throw validation_error(where + ": volume file missing: " + s.volume_path);
        }
        s.raw_scores.resize(m.entries.size());
        for (std::size_t i = 0; i < m.entries.size(); ++i) {
            s.raw_scores[i] = parse_double(fields[3 + i], where);
        }
        try {
            s.normalized_scores = normalize_scores(s.raw_scores, m, policy);
        } catch (const validation_error& e) {
            throw validation_error(where + ": " + e.what());
        }
        if (!seen.insert({s.subject_id, fields[1], s.interval_months}).second) {
            throw validation_error(where + ": duplicate (subject, volume, interval) row");
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_dataset_csv(const std::string& table_path, const ScoreManifest& m,
                       const std::vector<SampleTuple>& samples) {
    m.validate();
    std::ofstream f(table_path);
    if (!f) throw io_error("cannot open dataset table for writing: " + table_path);
    f << "subject_id,volume_path,interval_months";
    for (const auto& e : m.entries) f << ',' << e.name;
    f << '\n';
    f.precision(17);
    for (const auto& s : samples) {
        if (s.raw_scores.size() != m.entries.size()) {
            throw validation_error("sample '" + s.subject_id + "' has " +
                                   std::to_string(s.raw_scores.size()) + " raw scores, expected " +
                                   std::to_string(m.entries.size()));
        }
        f << s.subject_id << ',' << s.volume_path << ',' << s.interval_months;
        for (double v : s.raw_scores) f << ',' << v;
        f << '\n';
    }
    if (!f) throw io_error("failed writing dataset table: " + table_path);
}

nlohmann::json FoldPlan::to_json() const {
    return nlohmann::json{{"seed", seed}, {"k", k}, {"assignment", assignment}};
}

FoldPlan FoldPlan::from_json(const nlohmann::json& j) {
    FoldPlan p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.k = j.at("k").get<std::size_t>();
    j.at("assignment").get_to(p.assignment);
    if (p.k < 2) throw validation_error("fold plan k must be >= 2");
    for (std::size_t fid : p.assignment) {
        if (fid >= p.k) {
            throw validation_error("fold plan assigns fold " + std::to_string(fid) +
                                   " with k = " + std::to_string(p.k));
        }
    }
    return p;
}

FoldPlan FoldPlan::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open fold plan: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("fold plan " + path + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void FoldPlan::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw io_error("cannot open fold plan for writing: " + path);
    f << to_json().dump(2) << '\n';
}

FoldBuild build_stratified_folds(const std::vector<SampleTuple>& samples, std::size_t k,
                                 std::uint64_t seed, bool group_by_subject) {
    if (k < 2) throw validation_error("build_stratified_folds: k must be >= 2");
    if (k > samples.size()) {
        throw validation_error("build_stratified_folds: k = " + std::to_string(k) +
                               " exceeds sample count " + std::to_string(samples.size()));
    }
    FoldBuild out;
    out.plan.seed = seed;
    out.plan.k = k;
    out.plan.assignment.assign(samples.size(), 0);

    if (!group_by_subject) {
        // ascending-interval groups; the fold cursor runs on across groups
        std::map<int, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            groups[samples[i].interval_months].push_back(i);
        }
        std::size_t smallest = samples.size();
        std::size_t cursor = 0;
        for (auto& [interval, idx] : groups) {
            smallest = std::min(smallest, idx.size());
            Rng rng(mix_seed(seed, 0xF01D0000u + static_cast<std::uint64_t>(interval)));
            rng.shuffle(idx);
            for (std::size_t i : idx) {
                out.plan.assignment[i] = cursor % k;
                ++cursor;
            }
        }
        if (smallest < k) {
            out.warnings.push_back("smallest interval group has " + std::to_string(smallest) +
                                   " samples for k = " + std::to_string(k) +
                                   "; some folds miss that interval");
        }
        return out;
    }

    // grouped mode: whole subjects go to the currently smallest fold,
    // largest subjects first, ties broken by seeded shuffle order
    std::vector<std::string> subject_order;
    std::map<std::string, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto [it, inserted] = by_subject.try_emplace(samples[i].subject_id);
        if (inserted) subject_order.push_back(samples[i].subject_id);
        it->second.push_back(i);
    }
    if (by_subject.size() < k) {
        throw validation_error("build_stratified_folds: only " +
                               std::to_string(by_subject.size()) + " subjects for k = " +
                               std::to_string(k));
    }
    Rng rng(mix_seed(seed, 0x5b7ec7));
    rng.shuffle(subject_order);
    std::stable_sort(subject_order.begin(), subject_order.end(),
                     [&](const std::string& a, const std::string& b) {
                         return by_subject[a].size() > by_subject[b].size();
                     });
    std::vector<std::size_t> fold_sizes(k, 0);
    for (const std::string& subj : subject_order) {
        const std::size_t fold = static_cast<std::size_t>(
            std::min_element(fold_sizes.begin(), fold_sizes.end()) - fold_sizes.begin());
        for (std::size_t i : by_subject[subj]) out.plan.assignment[i] = fold;
        fold_sizes[fold] += by_subject[subj].size();
    }
    out.warnings.push_back(
        "group-by-subject keeps subjects intact; per-interval stratification is approximate");
    return out;
}

FoldSplit fold_split(const std::vector<SampleTuple>& samples, const FoldPlan& plan,
                     std::size_t fold_id) {
    if (plan.assignment.size() != samples.size()) {
        throw validation_error("fold plan covers " + std::to_string(plan.assignment.size()) +
                               " samples but dataset has " + std::to_string(samples.size()));
    }
    if (fold_id >= plan.k) {
        throw validation_error("fold id " + std::to_string(fold_id) + " outside [0, " +
                               std::to_string(plan.k) + ")");
    }
    FoldSplit split;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        (plan.assignment[i] == fold_id ? split.test : split.train).push_back(i);
    }
    return split;
}

std::vector<std::string> subject_leaks(const std::vector<SampleTuple>& samples,
                                       const FoldSplit& split) {
    std::set<std::string> train_subjects;
    for (std::size_t i : split.train) train_subjects.insert(samples[i].subject_id);
    std::set<std::string> leaked;
    for (std::size_t i : split.test) {
        if (train_subjects.count(samples[i].subject_id)) leaked.insert(samples[i].subject_id);
    }
    return {leaked.begin(), leaked.end()};
}

std::vector<std::pair<int, std::vector<std::size_t>>> fold_interval_counts(
    const std::vector<SampleTuple>& samples, const FoldPlan& plan) {
    if (plan.assignment.size() != samples.size()) {
        throw validation_error("fold plan covers " + std::to_string(plan.assignment.size()) +
                               " samples but dataset has " + std::to_string(samples.size()));
    }
    std::map<int, std::vector<std::size_t>> counts;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& row = counts[samples[i].interval_months];
        if (row.empty()) row.assign(plan.k, 0);
        ++row[plan.assignment[i]];
    }
    return {counts.begin(), counts.end()};
}

} // namespace cogtraj
