#pragma once

// Smooth-L1 loss, RMSProp updates, and the epoch/batch training loop.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cogtraj/error.hpp"
#include "cogtraj/network.hpp"
#include "cogtraj/rng.hpp"
#include "cogtraj/tensor.hpp"

namespace cogtraj {

template <typename T>
struct SmoothL1Result {
    double loss = 0.0;
    Tensor<T> grad;
};

// per element x = pred - target:
//   l(x) = 0.5 x^2 / beta   if |x| < beta
//        = |x| - 0.5 beta   otherwise
// loss = mean over all elements, grad = clamp(x/beta, -1, 1) / numel
template <typename T>
SmoothL1Result<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, double beta = 1.0) {
    check_same_shape("smooth_l1", pred, target);
    if (!(beta > 0.0)) throw param_error("smooth_l1: beta must be > 0");
    const std::size_t n = pred.numel();
    if (n == 0) throw param_error("smooth_l1: empty tensors");
    SmoothL1Result<T> r;
    r.grad = Tensor<T>(pred.shape());
    const double inv_n = 1.0 / static_cast<double>(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        const double ax = std::abs(x);
        double g;
        if (ax < beta) {
            acc += 0.5 * x * x / beta;
            g = x / beta;
        } else {
            acc += ax - 0.5 * beta;
            g = x > 0.0 ? 1.0 : -1.0;
        }
        r.grad[i] = static_cast<T>(g * inv_n);
    }
    r.loss = acc * inv_n;
    return r;
}

struct RmsPropConfig {
    double lr = 1e-4;
    double decay = 0.99; // rho
    double epsilon = 1e-8;

    void validate() const {
        if (!(lr >= 0.0)) throw param_error("rmsprop: lr must be >= 0");
        if (!(decay >= 0.0 && decay < 1.0)) throw param_error("rmsprop: decay must be in [0, 1)");
        if (!(epsilon >= 0.0)) throw param_error("rmsprop: epsilon must be >= 0");
    }
};

// cache <- rho*cache + (1-rho)*g^2;  theta <- theta - lr*g/(sqrt(cache) + eps)
template <typename T>
class RmsProp {
public:
    RmsProp(std::vector<ParamRef<T>> params, RmsPropConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        cache_.reserve(params_.size());
        for (const auto& p : params_) cache_.emplace_back(p.value->shape());
    }

    const RmsPropConfig& config() const { return cfg_; }
    std::size_t step_count() const { return step_; }
    const std::vector<Tensor<T>>& cache() const { return cache_; }

    void step(const std::vector<const Tensor<T>*>& grads) {
        if (grads.size() != params_.size()) {
            throw param_error("rmsprop: got " + std::to_string(grads.size()) +
                              " gradients for " + std::to_string(params_.size()) + " parameters");
        }
        ++step_;
        const T rho = static_cast<T>(cfg_.decay);
        const T one_minus_rho = static_cast<T>(1.0 - cfg_.decay);
        const T lr = static_cast<T>(cfg_.lr);
        const T eps = static_cast<T>(cfg_.epsilon);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor<T>& theta = *params_[pi].value;
            const Tensor<T>& g = *grads[pi];
            Tensor<T>& c = cache_[pi];
            if (g.shape() != theta.shape()) {
                throw shape_error("rmsprop: gradient shape " + shape_str(g.shape()) +
                                  " does not match parameter " + params_[pi].name + " " +
                                  shape_str(theta.shape()));
            }
            for (std::size_t i = 0; i < theta.numel(); ++i) {
                const T gv = g[i];
                if (!std::isfinite(static_cast<double>(gv))) {
                    throw runtime_abort("non-finite gradient in " + params_[pi].name +
                                        " at step " + std::to_string(step_));
                }
                c[i] = rho * c[i] + one_minus_rho * gv * gv;
                theta[i] -= lr * gv / (std::sqrt(c[i]) + eps);
            }
        }
    }

private:
    std::vector<ParamRef<T>> params_;
    RmsPropConfig cfg_;
    std::vector<Tensor<T>> cache_;
    std::size_t step_ = 0;
};

struct TrainPlan {
    std::size_t batch_size = 8;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
    bool shuffle = true;
    double smooth_l1_beta = 1.0;
    bool deterministic = true;
    double clip_global_norm = 0.0; // 0 disables clipping

    void validate(std::size_t dataset_size) const {
        if (batch_size == 0) throw param_error("train: batch_size must be >= 1");
        if (dataset_size == 0) throw param_error("train: dataset is empty");
        if (batch_size > dataset_size) {
            throw param_error("train: batch_size " + std::to_string(batch_size) +
                              " exceeds dataset size " + std::to_string(dataset_size));
        }
        if (!(smooth_l1_beta > 0.0)) throw param_error("train: smooth_l1_beta must be > 0");
        if (clip_global_norm < 0.0) throw param_error("train: clip_global_norm must be >= 0");
    }
};

// one in-memory training example; volume is [C,D,H,W]
template <typename T>
struct TrainSample {
    Tensor<T> volume;
    T months = 0;
    Tensor<T> targets; // [output_dim]
};

struct EpochStats {
    std::size_t epoch = 0; // 1-based
    double mean_loss = 0.0;
    double wall_seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

template <typename T>
void clip_by_global_norm(NetworkGrads<T>& grads, double max_norm) {
    std::vector<Tensor<T>*> ptrs = grads.param_order();
    double sq = 0.0;
    for (const Tensor<T>* g : ptrs) {
        for (std::size_t i = 0; i < g->numel(); ++i) {
            const double v = static_cast<double>((*g)[i]);
            sq += v * v;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const T scale = static_cast<T>(max_norm / norm);
    for (Tensor<T>* g : ptrs) {
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] *= scale;
    }
}

template <typename T>
std::vector<double> train(Network<T>& net, const std::vector<TrainSample<T>>& dataset,
                          const TrainPlan& plan, RmsProp<T>& opt,
                          const EpochCallback& on_epoch = {}) {
    plan.validate(dataset.size());
    const NetworkConfig& cfg = net.config();
    const std::size_t n = dataset.size();
    const std::size_t out_dim = cfg.output_dim;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = dataset[i];
        std::vector<std::size_t> want{cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2],
                                      cfg.input_shape[3]};
        if (s.volume.shape() != want) {
            throw shape_error("train: sample " + std::to_string(i) + " volume " +
                              shape_str(s.volume.shape()) + " does not match configured input " +
                              shape_str(want));
        }
        if (s.targets.numel() != out_dim) {
            throw shape_error("train: sample " + std::to_string(i) + " has " +
                              std::to_string(s.targets.numel()) + " targets, expected " +
                              std::to_string(out_dim));
        }
    }

    std::vector<double> history;
    history.reserve(plan.epochs);
    if (plan.epochs == 0) return history;

    Rng shuffle_rng(mix_seed(plan.seed, 1));
    Rng dropout_rng(mix_seed(plan.seed, 2));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    const std::size_t vol_len = cfg.input_shape[0] * cfg.input_shape[1] * cfg.input_shape[2] *
                                cfg.input_shape[3];
    for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (plan.shuffle) shuffle_rng.shuffle(order);
        double loss_acc = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += plan.batch_size, ++batch_index) {
            const std::size_t b = std::min(plan.batch_size, n - start);
            Tensor<T> volumes({b, cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2],
                               cfg.input_shape[3]});
            Tensor<T> months({b, 1});
            Tensor<T> targets({b, out_dim});
            for (std::size_t r = 0; r < b; ++r) {
                const TrainSample<T>& s = dataset[order[start + r]];
                std::copy(s.volume.data(), s.volume.data() + vol_len,
                          volumes.data() + r * vol_len);
                months[r] = s.months;
                std::copy(s.targets.data(), s.targets.data() + out_dim,
                          targets.data() + r * out_dim);
            }
            ForwardResult<T> fwd = net.forward(volumes, months, Mode::train, dropout_rng);
            SmoothL1Result<T> loss = smooth_l1(fwd.predictions, targets, plan.smooth_l1_beta);
            if (!std::isfinite(loss.loss)) {
                throw runtime_abort("non-finite loss at epoch " + std::to_string(epoch) +
                                    " batch " + std::to_string(batch_index));
            }
            loss_acc += loss.loss * static_cast<double>(b);
            NetworkGrads<T> grads = net.backward(fwd.tape, loss.grad);
            if (plan.clip_global_norm > 0.0) {
                clip_by_global_norm(grads, plan.clip_global_norm);
            }
            opt.step(std::as_const(grads).param_order());
        }
        const double mean_loss = loss_acc / static_cast<double>(n);
        history.push_back(mean_loss);
        if (on_epoch) {
            const auto t1 = std::chrono::steady_clock::now();
            EpochStats st;
            st.epoch = epoch;
            st.mean_loss = mean_loss;
            st.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
            on_epoch(st);
        }
    }
    return history;
}

} // namespace cogtraj
