#include "cogtraj/runconfig.hpp"

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace cogtraj {

namespace {

nlohmann::json train_to_json(const TrainPlan& p) {
    nlohmann::json j;
    j["batch_size"] = p.batch_size;
    j["epochs"] = p.epochs;
    j["shuffle"] = p.shuffle;
    j["smooth_l1_beta"] = p.smooth_l1_beta;
    j["clip_global_norm"] = p.clip_global_norm;
    return j;
}

TrainPlan train_from_json(const nlohmann::json& j) {
    TrainPlan p;
    p.batch_size = j.at("batch_size").get<std::size_t>();
    p.epochs = j.at("epochs").get<std::size_t>();
    p.shuffle = j.at("shuffle").get<bool>();
    p.smooth_l1_beta = j.at("smooth_l1_beta").get<double>();
    p.clip_global_norm = j.at("clip_global_norm").get<double>();
    return p;
}

nlohmann::json rmsprop_to_json(const RmsPropConfig& c) {
    return nlohmann::json{{"lr", c.lr}, {"decay", c.decay}, {"epsilon", c.epsilon}};
}

RmsPropConfig rmsprop_from_json(const nlohmann::json& j) {
    RmsPropConfig c;
    c.lr = j.at("lr").get<double>();
    c.decay = j.at("decay").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    return c;
}

} // namespace

nlohmann::json profile_defaults(const std::string& profile) {
    NetworkConfig net;
    TrainPlan train;
    if (profile == "desk") {
        net = NetworkConfig::desk_profile();
        train.epochs = 45;
        train.batch_size = 4;
    } else if (profile == "paper") {
        net = NetworkConfig::paper_profile();
        train.epochs = 50;
        train.batch_size = 16;
    } else {
        throw config_error("unknown profile '" + profile + "', expected desk or paper");
    }
    RmsPropConfig rp;
    if (profile == "desk") {
        // rmsprop steps are ~lr-sized regardless of gradient magnitude, so the
        // readout needs lr*steps of travel; epsilon damps steps on near-dead
        // units whose gradients are tiny, which keeps lr 2e-3 out of the relu
        // dead zone (3e-3 still collapses)
        rp.lr = 2e-3;
        rp.epsilon = 1e-4;
    }
    nlohmann::json j;
    j["profile"] = profile;
    j["precision"] = "float32";
    j["seed"] = 1;
    j["deterministic"] = true;
    j["k_folds"] = 5;
    j["group_by_subject"] = false;
    j["threads"] = 0;
    j["paths"] = {{"dataset_csv", "data/dataset.csv"},
                  {"manifest", "data/manifest.json"},
                  {"volume_root", "data"},
                  {"out_dir", "runs/out"}};
    j["network"] = net.to_json();
    j["train"] = train_to_json(train);
    j["rmsprop"] = rmsprop_to_json(rp);
    return j;
}

RunConfig RunConfig::resolve(const nlohmann::json& file_overlay,
                             const nlohmann::json& flag_overlay) {
    std::string profile = "desk";
    if (file_overlay.contains("profile")) profile = file_overlay.at("profile").get<std::string>();
    if (flag_overlay.contains("profile")) profile = flag_overlay.at("profile").get<std::string>();

    nlohmann::json j = profile_defaults(profile);
    j.merge_patch(file_overlay);
    j.merge_patch(flag_overlay);

    RunConfig c;
    try {
        c.profile = j.at("profile").get<std::string>();
        c.precision = j.at("precision").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.deterministic = j.at("deterministic").get<bool>();
        c.k_folds = j.at("k_folds").get<std::size_t>();
        c.group_by_subject = j.at("group_by_subject").get<bool>();
        c.threads = j.at("threads").get<int>();
        c.paths.dataset_csv = j.at("paths").at("dataset_csv").get<std::string>();
        c.paths.manifest = j.at("paths").at("manifest").get<std::string>();
        c.paths.volume_root = j.at("paths").at("volume_root").get<std::string>();
        c.paths.out_dir = j.at("paths").at("out_dir").get<std::string>();
        c.network = NetworkConfig::from_json(j.at("network"));
        c.train = train_from_json(j.at("train"));
        c.rmsprop = rmsprop_from_json(j.at("rmsprop"));
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config is malformed: ") + e.what());
    }
    c.train.seed = c.seed;
    c.validate();
    return c;
}

void RunConfig::validate() const {
    if (precision != "float32" && precision != "float64") {
        throw config_error("precision must be float32 or float64, got '" + precision + "'");
    }
    if (k_folds < 2) throw config_error("k_folds must be >= 2");
    if (threads < 0) throw config_error("threads must be >= 0");
    network.validate();
    rmsprop.validate();
    if (train.batch_size == 0) throw config_error("train.batch_size must be >= 1");
    if (!(train.smooth_l1_beta > 0.0)) throw config_error("train.smooth_l1_beta must be > 0");
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["profile"] = profile;
    j["precision"] = precision;
    j["seed"] = seed;
    j["deterministic"] = deterministic;
    j["k_folds"] = k_folds;
    j["group_by_subject"] = group_by_subject;
    j["threads"] = threads;
    j["paths"] = {{"dataset_csv", paths.dataset_csv},
                  {"manifest", paths.manifest},
                  {"volume_root", paths.volume_root},
                  {"out_dir", paths.out_dir}};
    j["network"] = network.to_json();
    j["train"] = train_to_json(train);
    j["rmsprop"] = rmsprop_to_json(rmsprop);
    return j;
}

nlohmann::json RunConfig::hash_relevant_json() const {
    nlohmann::json j = to_json();
    j["paths"].erase("out_dir"); // where results land does not change what they are
    j.erase("threads");          // kernels are thread-count invariant
    return j;
}

std::string RunConfig::config_hash() const { return hex64(fnv1a64(hash_relevant_json().dump())); }

void RunConfig::echo_effective(const std::string& out_dir) const {
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "effective_config.json").string();
    std::ofstream f(path);
    if (!f) throw io_error("cannot write effective config: " + path);
    nlohmann::json j = to_json();
    j["config_hash"] = config_hash();
    f << j.dump(2) << '\n';
}

nlohmann::json load_json_file(const std::string& path, const std::string& what) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open " + what + ": " + path);
    try {
        nlohmann::json j;
        f >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(what + " " + path + " is not valid JSON: " + e.what());
    }
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

} // namespace cogtraj
