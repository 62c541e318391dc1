#pragma once

// The model: three conv blocks (conv -> maxpool -> dropout -> relu), a
// flatten step that appends the normalized prediction time as one extra
// feature, three fully connected relu layers, and a linear output head.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cogtraj/error.hpp"
#include "cogtraj/ops.hpp"
#include "cogtraj/rng.hpp"
#include "cogtraj/tensor.hpp"

namespace cogtraj {

constexpr char kCheckpointMagic[4] = {'C', 'T', 'J', '1'};

inline double he_init_std(std::size_t fan_in) {
    if (fan_in == 0) {
        throw param_error("he_init_std: fan_in must be >= 1");
    }
    return std::sqrt(2.0 / static_cast<double>(fan_in));
}

struct NetworkConfig {
    std::array<std::size_t, 4> input_shape{1, 32, 32, 32}; // C, D, H, W
    std::array<std::size_t, 3> conv_channels{8, 16, 32};
    std::array<std::array<std::size_t, 3>, 3> conv_kernels{{{3, 3, 3}, {3, 3, 3}, {3, 3, 3}}};
    std::array<std::array<std::size_t, 3>, 3> conv_strides{{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}}};
    std::array<std::array<std::size_t, 3>, 3> conv_padding{{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}}};
    std::array<Pool3dSpec, 3> pools{Pool3dSpec{}, Pool3dSpec{}, Pool3dSpec{}};
    double dropout_p = 0.5;
    std::array<std::size_t, 3> fc_widths{64, 32, 16};
    std::size_t output_dim = 13;
    double time_scale = 36.0;
    bool strict_time = true;

    static NetworkConfig desk_profile() { return NetworkConfig{}; }

    static NetworkConfig paper_profile() {
        NetworkConfig c;
        c.fc_widths = {6000, 1000, 500};
        return c;
    }

    // Small enough for whole-network finite-difference checks.
    static NetworkConfig tiny_profile() {
        NetworkConfig c;
        c.input_shape = {1, 4, 4, 4};
        c.conv_channels = {1, 1, 1};
        c.pools = {Pool3dSpec{{2, 2, 2}, {2, 2, 2}},
                   Pool3dSpec{{2, 2, 2}, {2, 2, 2}},
                   Pool3dSpec{{1, 1, 1}, {1, 1, 1}}};
        c.fc_widths = {4, 3, 2};
        c.output_dim = 2;
        return c;
    }

    Conv3dSpec conv_spec(std::size_t block) const {
        Conv3dSpec s;
        s.in_channels = block == 0 ? input_shape[0] : conv_channels[block - 1];
        s.out_channels = conv_channels[block];
        s.kernel = conv_kernels[block];
        s.stride = conv_strides[block];
        s.padding = conv_padding[block];
        return s;
    }

    // Spatial extents after every conv block (conv then pool).
    std::array<std::array<std::size_t, 3>, 3> spatial_chain() const {
        std::array<std::size_t, 3> sp{input_shape[1], input_shape[2], input_shape[3]};
        std::array<std::array<std::size_t, 3>, 3> chain{};
        static const char* axis_names[3] = {"depth", "height", "width"};
        for (std::size_t b = 0; b < 3; ++b) {
            try {
                sp = conv_spec(b).output_extent(sp);
                sp = pools[b].output_extent(sp);
            } catch (const shape_error& e) {
                // name the axis that collapsed, per config contract
                for (int ax = 0; ax < 3; ++ax) {
                    std::string msg = e.what();
                    if (msg.find("axis " + std::to_string(ax)) != std::string::npos) {
                        throw config_error("conv block " + std::to_string(b + 1) +
                                           " collapses the " + axis_names[ax] +
                                           " axis below 1: " + msg);
                    }
                }
                throw config_error("conv block " + std::to_string(b + 1) + ": " + e.what());
            }
            chain[b] = sp;
        }
        return chain;
    }

    std::size_t flatten_size() const {
        auto chain = spatial_chain();
        return conv_channels[2] * chain[2][0] * chain[2][1] * chain[2][2];
    }

    void validate() const {
        for (std::size_t e : input_shape) {
            if (e == 0) throw config_error("input_shape extents must be >= 1");
        }
        for (std::size_t c : conv_channels) {
            if (c == 0) throw config_error("conv_channels must be >= 1");
        }
        for (std::size_t w : fc_widths) {
            if (w == 0) throw config_error("fc_widths must be >= 1");
        }
        if (output_dim == 0) throw config_error("output_dim must be >= 1");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
            throw config_error("dropout_p must lie in [0, 1)");
        }
        if (!(time_scale > 0.0)) throw config_error("time_scale must be > 0");
        spatial_chain(); // throws config_error when a spatial axis collapses
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["input_shape"] = input_shape;
        j["conv_channels"] = conv_channels;
        j["conv_kernels"] = conv_kernels;
        j["conv_strides"] = conv_strides;
        j["conv_padding"] = conv_padding;
        auto win = nlohmann::json::array(), pst = nlohmann::json::array();
        for (const auto& p : pools) {
            win.push_back(p.window);
            pst.push_back(p.stride);
        }
        j["pool_window"] = win;
        j["pool_stride"] = pst;
        j["dropout_p"] = dropout_p;
        j["fc_widths"] = fc_widths;
        j["output_dim"] = output_dim;
        j["time_scale"] = time_scale;
        j["strict_time"] = strict_time;
        return j;
    }

    static NetworkConfig from_json(const nlohmann::json& j) {
        NetworkConfig c;
        j.at("input_shape").get_to(c.input_shape);
        j.at("conv_channels").get_to(c.conv_channels);
        j.at("conv_kernels").get_to(c.conv_kernels);
        j.at("conv_strides").get_to(c.conv_strides);
        j.at("conv_padding").get_to(c.conv_padding);
        for (std::size_t b = 0; b < 3; ++b) {
            j.at("pool_window").at(b).get_to(c.pools[b].window);
            j.at("pool_stride").at(b).get_to(c.pools[b].stride);
        }
        c.dropout_p = j.at("dropout_p").get<double>();
        j.at("fc_widths").get_to(c.fc_widths);
        c.output_dim = j.at("output_dim").get<std::size_t>();
        c.time_scale = j.at("time_scale").get<double>();
        if (j.contains("strict_time")) c.strict_time = j.at("strict_time").get<bool>();
        return c;
    }
};

struct LayerInfo {
    std::string kind; // conv3d | maxpool3d | dropout | relu | concat_time | linear | linear_head
    std::string name;
    int block = -1;           // conv block or fc index, 1-based; -1 when n/a
    std::size_t output_units = 0; // linear layers only
    double dropout_p = 0.0;       // dropout layers only
    bool takes_time = false;      // concat layer only
};

template <typename T>
struct NetworkTape {
    Mode mode = Mode::eval;
    std::size_t batch = 0;
    std::array<Tensor<T>, 3> conv_in;
    std::array<std::vector<std::size_t>, 3> pool_argmax;
    std::array<std::vector<std::size_t>, 3> pool_in_shape;
    std::array<std::vector<std::uint8_t>, 3> drop_mask;
    std::array<Tensor<T>, 3> relu_in;
    std::vector<std::size_t> features_shape;
    std::array<Tensor<T>, 3> fc_in;
    std::array<Tensor<T>, 3> fc_relu_in;
    Tensor<T> head_in;
};

template <typename T>
struct ForwardResult {
    Tensor<T> predictions;
    NetworkTape<T> tape;
};

template <typename T>
struct NetworkGrads {
    std::array<Tensor<T>, 3> conv_w, conv_b;
    std::array<Tensor<T>, 3> fc_w, fc_b;
    Tensor<T> head_w, head_b;
    Tensor<T> months;  // [N, 1], d(loss)/d(raw months)
    Tensor<T> volumes; // empty unless requested

    // same order as Network::parameters()
    std::vector<const Tensor<T>*> param_order() const {
        std::vector<const Tensor<T>*> v;
        for (std::size_t b = 0; b < 3; ++b) {
            v.push_back(&conv_w[b]);
            v.push_back(&conv_b[b]);
        }
        for (std::size_t b = 0; b < 3; ++b) {
            v.push_back(&fc_w[b]);
            v.push_back(&fc_b[b]);
        }
        v.push_back(&head_w);
        v.push_back(&head_b);
        return v;
    }

    std::vector<Tensor<T>*> param_order() {
        std::vector<Tensor<T>*> v;
        for (std::size_t b = 0; b < 3; ++b) {
            v.push_back(&conv_w[b]);
            v.push_back(&conv_b[b]);
        }
        for (std::size_t b = 0; b < 3; ++b) {
            v.push_back(&fc_w[b]);
            v.push_back(&fc_b[b]);
        }
        v.push_back(&head_w);
        v.push_back(&head_b);
        return v;
    }
};

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value;
};

template <typename T>
inline const char* dtype_name();
template <>
inline const char* dtype_name<float>() { return "float32"; }
template <>
inline const char* dtype_name<double>() { return "float64"; }

template <typename T>
class Network {
public:
    Network() = default;

    static Network build(const NetworkConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Network net;
        net.cfg_ = cfg;
        Rng rng(seed);
        for (std::size_t b = 0; b < 3; ++b) {
            Conv3dSpec s = cfg.conv_spec(b);
            std::size_t fan_in = s.in_channels * s.kernel[0] * s.kernel[1] * s.kernel[2];
            net.conv_w_[b] = gaussian({s.out_channels, s.in_channels, s.kernel[0], s.kernel[1],
                                       s.kernel[2]},
                                      he_init_std(fan_in), rng);
            net.conv_b_[b] = Tensor<T>({s.out_channels});
        }
        std::size_t in_width = cfg.flatten_size() + 1;
        for (std::size_t b = 0; b < 3; ++b) {
            net.fc_w_[b] = gaussian({cfg.fc_widths[b], in_width}, he_init_std(in_width), rng);
            net.fc_b_[b] = Tensor<T>({cfg.fc_widths[b]});
            in_width = cfg.fc_widths[b];
        }
        // zero readout with mid-scale bias: predictions start at 0.5 for [0,1] targets,
        // so rmsprop's sign-sized steps never have to walk back He-scale output swings
        net.head_w_ = Tensor<T>({cfg.output_dim, in_width});
        net.head_b_ = Tensor<T>({cfg.output_dim});
        for (std::size_t i = 0; i < net.head_b_.numel(); ++i) net.head_b_[i] = T(0.5);
        return net;
    }

    const NetworkConfig& config() const { return cfg_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* p : const_cast<Network*>(this)->parameter_tensors()) n += p->numel();
        return n;
    }

    std::vector<ParamRef<T>> parameters() {
        std::vector<ParamRef<T>> v;
        for (std::size_t b = 0; b < 3; ++b) {
            v.push_back({"conv" + std::to_string(b + 1) + ".weight", &conv_w_[b]});
            v.push_back({"conv" + std::to_string(b + 1) + ".bias", &conv_b_[b]});
        }
        for (std::size_t b = 0; b < 3; ++b) {
            v.push_back({"fc" + std::to_string(b + 1) + ".weight", &fc_w_[b]});
            v.push_back({"fc" + std::to_string(b + 1) + ".bias", &fc_b_[b]});
        }
        v.push_back({"head.weight", &head_w_});
        v.push_back({"head.bias", &head_b_});
        return v;
    }

    std::vector<Tensor<T>*> parameter_tensors() {
        std::vector<Tensor<T>*> v;
        for (auto& p : parameters()) v.push_back(p.value);
        return v;
    }

    // volumes: [N, C, D, H, W]; months: [N, 1], raw months in [0, time_scale]
    ForwardResult<T> forward(const Tensor<T>& volumes, const Tensor<T>& months, Mode mode,
                             Rng& rng) const {
        check_input(volumes, months);
        ForwardResult<T> r;
        NetworkTape<T>& tape = r.tape;
        tape.mode = mode;
        tape.batch = volumes.extent(0);

        Tensor<T> x = volumes;
        for (std::size_t b = 0; b < 3; ++b) {
            tape.conv_in[b] = x;
            Tensor<T> y = conv3d_forward(x, conv_w_[b], conv_b_[b], cfg_.conv_spec(b));
            tape.pool_in_shape[b] = y.shape();
            PoolResult<T> p = maxpool3d_forward(y, cfg_.pools[b]);
            tape.pool_argmax[b] = std::move(p.argmax);
            DropoutResult<T> d = dropout_forward(p.output, cfg_.dropout_p, mode, rng);
            tape.drop_mask[b] = std::move(d.mask);
            tape.relu_in[b] = std::move(d.output);
            x = relu_forward(tape.relu_in[b]);
        }
        tape.features_shape = x.shape();

        Tensor<T> scaled({months.extent(0), 1});
        const T inv_scale = static_cast<T>(1.0 / cfg_.time_scale);
        for (std::size_t n = 0; n < months.extent(0); ++n) {
            scaled[n] = months[n] * inv_scale;
        }
        Tensor<T> z = flatten_concat(x, scaled);
        for (std::size_t b = 0; b < 3; ++b) {
            tape.fc_in[b] = std::move(z);
            tape.fc_relu_in[b] = linear_forward(tape.fc_in[b], fc_w_[b], fc_b_[b]);
            z = relu_forward(tape.fc_relu_in[b]);
        }
        tape.head_in = std::move(z);
        r.predictions = linear_forward(tape.head_in, head_w_, head_b_);
        return r;
    }

    NetworkGrads<T> backward(const NetworkTape<T>& tape, const Tensor<T>& grad_predictions,
                             bool need_volume_grad = false) const {
        if (tape.mode == Mode::eval && cfg_.dropout_p > 0.0) {
            throw param_error("backward on an eval tape is only valid when dropout_p == 0");
        }
        NetworkGrads<T> g;
        LinearGrads<T> hl = linear_backward(grad_predictions, tape.head_in, head_w_);
        g.head_w = std::move(hl.weights);
        g.head_b = std::move(hl.bias);
        Tensor<T> grad = std::move(hl.input);
        for (std::size_t b = 3; b-- > 0;) {
            grad = relu_backward(grad, tape.fc_relu_in[b]);
            LinearGrads<T> fl = linear_backward(grad, tape.fc_in[b], fc_w_[b]);
            g.fc_w[b] = std::move(fl.weights);
            g.fc_b[b] = std::move(fl.bias);
            grad = std::move(fl.input);
        }
        SplitGrads<T> split = flatten_concat_backward(grad, tape.features_shape);
        g.months = Tensor<T>({split.time.extent(0), 1});
        const T inv_scale = static_cast<T>(1.0 / cfg_.time_scale);
        for (std::size_t n = 0; n < g.months.numel(); ++n) {
            g.months[n] = split.time[n] * inv_scale;
        }
        grad = std::move(split.features);
        for (std::size_t b = 3; b-- > 0;) {
            grad = relu_backward(grad, tape.relu_in[b]);
            if (tape.mode == Mode::train && cfg_.dropout_p > 0.0) {
                grad = dropout_backward(grad, tape.drop_mask[b], cfg_.dropout_p);
            }
            grad = maxpool3d_backward(grad, tape.pool_argmax[b], tape.pool_in_shape[b]);
            const bool want_input = b > 0 || need_volume_grad;
            Conv3dGrads<T> cg = conv3d_backward(grad, tape.conv_in[b], conv_w_[b],
                                                cfg_.conv_spec(b), want_input);
            g.conv_w[b] = std::move(cg.weights);
            g.conv_b[b] = std::move(cg.bias);
            if (want_input) grad = std::move(cg.input);
        }
        if (need_volume_grad) g.volumes = std::move(grad);
        return g;
    }

    std::vector<LayerInfo> layer_list() const {
        std::vector<LayerInfo> layers;
        for (int b = 1; b <= 3; ++b) {
            layers.push_back({"conv3d", "conv" + std::to_string(b), b,
                              cfg_.conv_channels[b - 1], 0.0, false});
            layers.push_back({"maxpool3d", "pool" + std::to_string(b), b, 0, 0.0, false});
            layers.push_back({"dropout", "drop" + std::to_string(b), b, 0, cfg_.dropout_p, false});
            layers.push_back({"relu", "relu" + std::to_string(b), b, 0, 0.0, false});
        }
        layers.push_back({"concat_time", "flatten_concat", -1, cfg_.flatten_size() + 1, 0.0, true});
        for (int b = 1; b <= 3; ++b) {
            layers.push_back({"linear", "fc" + std::to_string(b), b, cfg_.fc_widths[b - 1], 0.0,
                              false});
            layers.push_back({"relu", "fc_relu" + std::to_string(b), b, 0, 0.0, false});
        }
        layers.push_back({"linear_head", "head", -1, cfg_.output_dim, 0.0, false});
        return layers;
    }

    void save(const std::string& path) const {
        nlohmann::json meta;
        meta["version"] = 1;
        meta["dtype"] = dtype_name<T>();
        meta["config"] = cfg_.to_json();
        std::string blob = meta.dump();
        std::ofstream f(path, std::ios::binary);
        if (!f) throw io_error("cannot open checkpoint for writing: " + path);
        f.write(kCheckpointMagic, 4);
        write_u64(f, blob.size());
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        for (const auto* p : const_cast<Network*>(this)->parameter_tensors()) {
            f.write(reinterpret_cast<const char*>(p->data()),
                    static_cast<std::streamsize>(p->numel() * sizeof(T)));
        }
        if (!f) throw io_error("failed writing checkpoint: " + path);
    }

    static Network load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw io_error("cannot open checkpoint: " + path);
        char magic[4];
        if (!f.read(magic, 4)) {
            throw checkpoint_truncated_error("checkpoint shorter than its magic: " + path);
        }
        if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
            throw checkpoint_version_error("unsupported checkpoint magic '" +
                                           std::string(magic, 4) + "' in " + path);
        }
        std::uint64_t blob_len = read_u64(f, path);
        std::string blob(blob_len, '\0');
        if (!f.read(blob.data(), static_cast<std::streamsize>(blob_len))) {
            throw checkpoint_truncated_error("checkpoint config blob truncated: " + path);
        }
        nlohmann::json meta;
        try {
            meta = nlohmann::json::parse(blob);
        } catch (const nlohmann::json::exception& e) {
            throw checkpoint_shape_error("checkpoint config blob is not valid JSON: " +
                                         std::string(e.what()));
        }
        if (meta.value("version", 0) != 1) {
            throw checkpoint_version_error("unsupported checkpoint version " +
                                           meta.value("version", nlohmann::json()).dump());
        }
        std::string dtype = meta.value("dtype", "");
        if (dtype != dtype_name<T>()) {
            throw checkpoint_shape_error("checkpoint dtype '" + dtype + "' does not match '" +
                                         std::string(dtype_name<T>()) + "'");
        }
        NetworkConfig cfg;
        try {
            cfg = NetworkConfig::from_json(meta.at("config"));
            cfg.validate();
        } catch (const config_error& e) {
            throw checkpoint_shape_error(std::string("checkpoint config invalid: ") + e.what());
        } catch (const nlohmann::json::exception& e) {
            throw checkpoint_shape_error(std::string("checkpoint config invalid: ") + e.what());
        }
        Network net = Network::build(cfg, 0);
        for (auto* p : net.parameter_tensors()) {
            if (!f.read(reinterpret_cast<char*>(p->data()),
                        static_cast<std::streamsize>(p->numel() * sizeof(T)))) {
                throw checkpoint_truncated_error("checkpoint parameter data truncated: " + path);
            }
        }
        char extra;
        if (f.read(&extra, 1)) {
            throw checkpoint_shape_error("checkpoint has trailing bytes after parameters: " +
                                         path);
        }
        return net;
    }

private:
    static Tensor<T> gaussian(std::vector<std::size_t> shape, double std, Rng& rng) {
        Tensor<T> t(std::move(shape));
        for (std::size_t i = 0; i < t.numel(); ++i) {
            t[i] = static_cast<T>(rng.normal(0.0, std));
        }
        return t;
    }

    void check_input(const Tensor<T>& volumes, const Tensor<T>& months) const {
        detail::require_rank("forward volumes", volumes.rank(), 5);
        std::vector<std::size_t> want{volumes.extent(0), cfg_.input_shape[0], cfg_.input_shape[1],
                                      cfg_.input_shape[2], cfg_.input_shape[3]};
        if (volumes.shape() != want) {
            throw shape_error("forward volumes shape " + shape_str(volumes.shape()) +
                              " does not match configured input " + shape_str(want));
        }
        if (months.rank() != 2 || months.extent(0) != volumes.extent(0) ||
            months.extent(1) != 1) {
            throw shape_error("forward months shape " + shape_str(months.shape()) +
                              " must be [" + std::to_string(volumes.extent(0)) + ", 1]");
        }
        if (cfg_.strict_time) {
            for (std::size_t n = 0; n < months.numel(); ++n) {
                double m = static_cast<double>(months[n]);
                if (!(m >= 0.0 && m <= cfg_.time_scale)) {
                    throw validation_error("month " + std::to_string(m) +
                                           " outside [0, " + std::to_string(cfg_.time_scale) +
                                           "]");
                }
            }
        }
    }

    static void write_u64(std::ofstream& f, std::uint64_t v) {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        f.write(b, 8);
    }

    static std::uint64_t read_u64(std::ifstream& f, const std::string& path) {
        unsigned char b[8];
        if (!f.read(reinterpret_cast<char*>(b), 8)) {
            throw checkpoint_truncated_error("checkpoint header truncated: " + path);
        }
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    NetworkConfig cfg_;
    std::array<Tensor<T>, 3> conv_w_, conv_b_;
    std::array<Tensor<T>, 3> fc_w_, fc_b_;
    Tensor<T> head_w_, head_b_;
};

// reads just the embedded metadata, so callers can pick the right precision
inline nlohmann::json peek_checkpoint_meta(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open checkpoint: " + path);
    char magic[4];
    if (!f.read(magic, 4)) throw checkpoint_truncated_error("checkpoint shorter than its magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw checkpoint_version_error("unsupported checkpoint magic '" + std::string(magic, 4) +
                                       "'");
    }
    unsigned char b[8];
    if (!f.read(reinterpret_cast<char*>(b), 8)) {
        throw checkpoint_truncated_error("checkpoint header truncated");
    }
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    std::string blob(len, '\0');
    if (!f.read(blob.data(), static_cast<std::streamsize>(len))) {
        throw checkpoint_truncated_error("checkpoint config blob truncated");
    }
    return nlohmann::json::parse(blob);
}

} // namespace cogtraj
