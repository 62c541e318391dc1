#pragma once

// Forward and backward kernels for every primitive the network needs.
// These are the production (OpenMP) implementations; cogtraj/ops_serial.hpp
// keeps independently written reference loops for testing and benchmarks.
//
// All parallel loops write disjoint output elements and accumulate each
// element in a fixed serial order, so results are bit-identical for any
// thread count.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "cogtraj/error.hpp"
#include "cogtraj/rng.hpp"
#include "cogtraj/tensor.hpp"

namespace cogtraj {

enum class Mode { train, eval };

using i64 = std::int64_t;

struct Conv3dSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::array<std::size_t, 3> kernel{3, 3, 3};
    std::array<std::size_t, 3> stride{1, 1, 1};
    std::array<std::size_t, 3> padding{0, 0, 0};

    // floor((in + 2*pad - kernel) / stride) + 1, per axis
    std::array<std::size_t, 3> output_extent(const std::array<std::size_t, 3>& in) const {
        std::array<std::size_t, 3> out{};
        for (int ax = 0; ax < 3; ++ax) {
            if (kernel[ax] == 0 || stride[ax] == 0) {
                throw shape_error("conv kernel/stride extents must be >= 1");
            }
            i64 padded = static_cast<i64>(in[ax]) + 2 * static_cast<i64>(padding[ax]);
            i64 span = padded - static_cast<i64>(kernel[ax]);
            if (span < 0) {
                throw shape_error("conv kernel " + std::to_string(kernel[ax]) +
                                  " exceeds padded input " + std::to_string(padded) +
                                  " on spatial axis " + std::to_string(ax));
            }
            out[ax] = static_cast<std::size_t>(span / static_cast<i64>(stride[ax])) + 1;
        }
        return out;
    }
};

struct Pool3dSpec {
    std::array<std::size_t, 3> window{2, 2, 2};
    std::array<std::size_t, 3> stride{2, 2, 2};

    std::array<std::size_t, 3> output_extent(const std::array<std::size_t, 3>& in) const {
        std::array<std::size_t, 3> out{};
        for (int ax = 0; ax < 3; ++ax) {
            if (window[ax] == 0 || stride[ax] == 0) {
                throw shape_error("pool window/stride extents must be >= 1");
            }
            if (window[ax] > in[ax]) {
                throw shape_error("pool window " + std::to_string(window[ax]) +
                                  " exceeds input extent " + std::to_string(in[ax]) +
                                  " on spatial axis " + std::to_string(ax));
            }
            out[ax] = (in[ax] - window[ax]) / stride[ax] + 1;
        }
        return out;
    }
};

namespace detail {

// Valid output range along one axis for one kernel tap: input coordinate
// out*stride + tap - pad must stay inside [0, in_extent). Range is inclusive;
// empty when lo > hi.
inline void tap_range(i64 in_extent, i64 out_extent, i64 stride, i64 pad, i64 tap,
                      i64& lo, i64& hi) {
    i64 shift = tap - pad;
    lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
    i64 max_in = in_extent - 1 - shift;
    hi = max_in < 0 ? -1 : std::min(out_extent - 1, max_in / stride);
}

inline void require_rank(const char* what, std::size_t rank, std::size_t want) {
    if (rank != want) {
        throw shape_error(std::string(what) + ": expected rank " + std::to_string(want) +
                          ", got " + std::to_string(rank));
    }
}

} // namespace detail

template <typename T>
void conv3d_check(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                  const Conv3dSpec& spec) {
    detail::require_rank("conv3d input", input.rank(), 5);
    detail::require_rank("conv3d weights", weights.rank(), 5);
    detail::require_rank("conv3d bias", bias.rank(), 1);
    std::vector<std::size_t> want_w{spec.out_channels, spec.in_channels,
                                    spec.kernel[0], spec.kernel[1], spec.kernel[2]};
    if (weights.shape() != want_w) {
        throw shape_error("conv3d weights shape " + shape_str(weights.shape()) +
                          " does not match spec " + shape_str(want_w));
    }
    if (input.extent(1) != spec.in_channels) {
        throw shape_error("conv3d input shape " + shape_str(input.shape()) +
                          " has channel count " + std::to_string(input.extent(1)) +
                          ", weights expect " + std::to_string(spec.in_channels));
    }
    if (bias.extent(0) != spec.out_channels) {
        throw shape_error("conv3d bias shape " + shape_str(bias.shape()) +
                          " does not match out_channels " + std::to_string(spec.out_channels));
    }
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>& bias, const Conv3dSpec& spec) {
    conv3d_check(input, weights, bias, spec);
    const i64 N = input.extent(0), C = input.extent(1);
    const i64 D = input.extent(2), H = input.extent(3), W = input.extent(4);
    const i64 K = spec.out_channels;
    auto oe = spec.output_extent({input.extent(2), input.extent(3), input.extent(4)});
    const i64 OD = oe[0], OH = oe[1], OW = oe[2];
    const i64 kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
    const i64 sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
    const i64 pd = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];

    Tensor<T> out({static_cast<std::size_t>(N), static_cast<std::size_t>(K),
                   static_cast<std::size_t>(OD), static_cast<std::size_t>(OH),
                   static_cast<std::size_t>(OW)});
    const T* x0 = input.data();
    const T* w0 = weights.data();
    const T* b0 = bias.data();
    T* o0 = out.data();
    const i64 out_slice = OD * OH * OW;
    const i64 in_slice = D * H * W;
    const i64 ker_slice = kd * kh * kw;

#pragma omp parallel for collapse(2) schedule(static)
    for (i64 n = 0; n < N; ++n) {
        for (i64 k = 0; k < K; ++k) {
            T* o = o0 + (n * K + k) * out_slice;
            std::fill(o, o + out_slice, b0[k]);
            for (i64 c = 0; c < C; ++c) {
                const T* x = x0 + (n * C + c) * in_slice;
                const T* wk = w0 + (k * C + c) * ker_slice;
                for (i64 a = 0; a < kd; ++a) {
                    i64 od_lo, od_hi;
                    detail::tap_range(D, OD, sd, pd, a, od_lo, od_hi);
                    for (i64 b = 0; b < kh; ++b) {
                        i64 oh_lo, oh_hi;
                        detail::tap_range(H, OH, sh, ph, b, oh_lo, oh_hi);
                        for (i64 q = 0; q < kw; ++q) {
                            i64 ow_lo, ow_hi;
                            detail::tap_range(W, OW, sw, pw, q, ow_lo, ow_hi);
                            if (od_lo > od_hi || oh_lo > oh_hi || ow_lo > ow_hi) continue;
                            const T wv = wk[(a * kh + b) * kw + q];
                            const i64 off = q - pw;
                            for (i64 od = od_lo; od <= od_hi; ++od) {
                                const i64 id = od * sd + a - pd;
                                for (i64 oh = oh_lo; oh <= oh_hi; ++oh) {
                                    const i64 ih = oh * sh + b - ph;
                                    T* orow = o + (od * OH + oh) * OW;
                                    const T* xrow = x + (id * H + ih) * W;
                                    if (sw == 1) {
                                        for (i64 ow = ow_lo; ow <= ow_hi; ++ow) {
                                            orow[ow] += wv * xrow[ow + off];
                                        }
                                    } else {
                                        for (i64 ow = ow_lo; ow <= ow_hi; ++ow) {
                                            orow[ow] += wv * xrow[ow * sw + off];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
struct Conv3dGrads {
    Tensor<T> input;   // empty when not requested
    Tensor<T> weights;
    Tensor<T> bias;
};

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weights, const Conv3dSpec& spec,
                               bool need_input_grad = true) {
    Tensor<T> bias_dummy({spec.out_channels});
    conv3d_check(input, weights, bias_dummy, spec);
    auto oe = spec.output_extent({input.extent(2), input.extent(3), input.extent(4)});
    std::vector<std::size_t> want_out{input.extent(0), spec.out_channels, oe[0], oe[1], oe[2]};
    if (grad_out.shape() != want_out) {
        throw shape_error("conv3d grad_out shape " + shape_str(grad_out.shape()) +
                          " does not match forward output " + shape_str(want_out));
    }

    const i64 N = input.extent(0), C = input.extent(1);
    const i64 D = input.extent(2), H = input.extent(3), W = input.extent(4);
    const i64 K = spec.out_channels;
    const i64 OD = oe[0], OH = oe[1], OW = oe[2];
    const i64 kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
    const i64 sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
    const i64 pd = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];
    const i64 out_slice = OD * OH * OW;
    const i64 in_slice = D * H * W;
    const i64 ker_slice = kd * kh * kw;

    Conv3dGrads<T> g;
    g.weights = Tensor<T>(weights.shape());
    g.bias = Tensor<T>({static_cast<std::size_t>(K)});
    const T* go0 = grad_out.data();
    const T* x0 = input.data();
    const T* w0 = weights.data();

#pragma omp parallel for schedule(static)
    for (i64 k = 0; k < K; ++k) {
        double acc = 0.0;
        for (i64 n = 0; n < N; ++n) {
            const T* go = go0 + (n * K + k) * out_slice;
            for (i64 i = 0; i < out_slice; ++i) acc += go[i];
        }
        g.bias[static_cast<std::size_t>(k)] = static_cast<T>(acc);
    }

    T* gw0 = g.weights.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 k = 0; k < K; ++k) {
        for (i64 c = 0; c < C; ++c) {
            T* gw = gw0 + (k * C + c) * ker_slice;
            for (i64 a = 0; a < kd; ++a) {
                i64 od_lo, od_hi;
                detail::tap_range(D, OD, sd, pd, a, od_lo, od_hi);
                for (i64 b = 0; b < kh; ++b) {
                    i64 oh_lo, oh_hi;
                    detail::tap_range(H, OH, sh, ph, b, oh_lo, oh_hi);
                    for (i64 q = 0; q < kw; ++q) {
                        i64 ow_lo, ow_hi;
                        detail::tap_range(W, OW, sw, pw, q, ow_lo, ow_hi);
                        double acc = 0.0;
                        if (od_lo <= od_hi && oh_lo <= oh_hi && ow_lo <= ow_hi) {
                            const i64 off = q - pw;
                            for (i64 n = 0; n < N; ++n) {
                                const T* go = go0 + (n * K + k) * out_slice;
                                const T* x = x0 + (n * C + c) * in_slice;
                                for (i64 od = od_lo; od <= od_hi; ++od) {
                                    const i64 id = od * sd + a - pd;
                                    for (i64 oh = oh_lo; oh <= oh_hi; ++oh) {
                                        const i64 ih = oh * sh + b - ph;
                                        const T* gorow = go + (od * OH + oh) * OW;
                                        const T* xrow = x + (id * H + ih) * W;
                                        if (sw == 1) {
                                            for (i64 ow = ow_lo; ow <= ow_hi; ++ow) {
                                                acc += static_cast<double>(gorow[ow]) * xrow[ow + off];
                                            }
                                        } else {
                                            for (i64 ow = ow_lo; ow <= ow_hi; ++ow) {
                                                acc += static_cast<double>(gorow[ow]) * xrow[ow * sw + off];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        gw[(a * kh + b) * kw + q] = static_cast<T>(acc);
                    }
                }
            }
        }
    }

    if (need_input_grad) {
        g.input = Tensor<T>(input.shape());
        T* gi0 = g.input.data();
#pragma omp parallel for schedule(static)
        for (i64 n = 0; n < N; ++n) {
            for (i64 k = 0; k < K; ++k) {
                const T* go = go0 + (n * K + k) * out_slice;
                for (i64 c = 0; c < C; ++c) {
                    T* gi = gi0 + (n * C + c) * in_slice;
                    const T* wk = w0 + (k * C + c) * ker_slice;
                    for (i64 a = 0; a < kd; ++a) {
                        i64 od_lo, od_hi;
                        detail::tap_range(D, OD, sd, pd, a, od_lo, od_hi);
                        for (i64 b = 0; b < kh; ++b) {
                            i64 oh_lo, oh_hi;
                            detail::tap_range(H, OH, sh, ph, b, oh_lo, oh_hi);
                            for (i64 q = 0; q < kw; ++q) {
                                i64 ow_lo, ow_hi;
                                detail::tap_range(W, OW, sw, pw, q, ow_lo, ow_hi);
                                if (od_lo > od_hi || oh_lo > oh_hi || ow_lo > ow_hi) continue;
                                const T wv = wk[(a * kh + b) * kw + q];
                                const i64 off = q - pw;
                                for (i64 od = od_lo; od <= od_hi; ++od) {
                                    const i64 id = od * sd + a - pd;
                                    for (i64 oh = oh_lo; oh <= oh_hi; ++oh) {
                                        const i64 ih = oh * sh + b - ph;
                                        const T* gorow = go + (od * OH + oh) * OW;
                                        T* girow = gi + (id * H + ih) * W;
                                        if (sw == 1) {
                                            for (i64 ow = ow_lo; ow <= ow_hi; ++ow) {
                                                girow[ow + off] += wv * gorow[ow];
                                            }
                                        } else {
                                            for (i64 ow = ow_lo; ow <= ow_hi; ++ow) {
                                                girow[ow * sw + off] += wv * gorow[ow];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return g;
}

template <typename T>
struct PoolResult {
    Tensor<T> output;
    std::vector<std::size_t> argmax; // flat index into input, one per output element
};

template <typename T>
PoolResult<T> maxpool3d_forward(const Tensor<T>& input, const Pool3dSpec& spec) {
    detail::require_rank("maxpool3d input", input.rank(), 5);
    const i64 N = input.extent(0), C = input.extent(1);
    const i64 D = input.extent(2), H = input.extent(3), W = input.extent(4);
    auto oe = spec.output_extent({input.extent(2), input.extent(3), input.extent(4)});
    const i64 OD = oe[0], OH = oe[1], OW = oe[2];
    const i64 wd = spec.window[0], wh = spec.window[1], ww = spec.window[2];
    const i64 sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];

    PoolResult<T> r;
    r.output = Tensor<T>({static_cast<std::size_t>(N), static_cast<std::size_t>(C),
                          static_cast<std::size_t>(OD), static_cast<std::size_t>(OH),
                          static_cast<std::size_t>(OW)});
    r.argmax.assign(r.output.numel(), 0);
    const T* x0 = input.data();
    T* o0 = r.output.data();
    std::size_t* am0 = r.argmax.data();
    const i64 in_slice = D * H * W;
    const i64 out_slice = OD * OH * OW;

#pragma omp parallel for collapse(2) schedule(static)
    for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
            const T* x = x0 + (n * C + c) * in_slice;
            T* o = o0 + (n * C + c) * out_slice;
            std::size_t* am = am0 + (n * C + c) * out_slice;
            const std::size_t base = static_cast<std::size_t>((n * C + c) * in_slice);
            i64 oi = 0;
            for (i64 od = 0; od < OD; ++od) {
                for (i64 oh = 0; oh < OH; ++oh) {
                    for (i64 ow = 0; ow < OW; ++ow, ++oi) {
                        const i64 d0 = od * sd, h0 = oh * sh, w0 = ow * sw;
                        // row-major scan keeps the first occurrence on ties
                        i64 best = (d0 * H + h0) * W + w0;
                        T best_v = x[best];
                        for (i64 d = d0; d < d0 + wd; ++d) {
                            for (i64 h = h0; h < h0 + wh; ++h) {
                                const T* row = x + (d * H + h) * W;
                                for (i64 w = w0; w < w0 + ww; ++w) {
                                    if (row[w] > best_v) {
                                        best_v = row[w];
                                        best = (d * H + h) * W + w;
                                    }
                                }
                            }
                        }
                        o[oi] = best_v;
                        am[oi] = base + static_cast<std::size_t>(best);
                    }
                }
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                             const std::vector<std::size_t>& input_shape) {
    detail::require_rank("maxpool3d grad_out", grad_out.rank(), 5);
    if (input_shape.size() != 5) {
        throw shape_error("maxpool3d input_shape must have rank 5, got " +
                          shape_str(input_shape));
    }
    if (argmax.size() != grad_out.numel()) {
        throw param_error("argmax memo length " + std::to_string(argmax.size()) +
                          " does not match grad_out elements " + std::to_string(grad_out.numel()));
    }
    if (grad_out.extent(0) != input_shape[0] || grad_out.extent(1) != input_shape[1]) {
        throw shape_error("maxpool3d grad_out " + shape_str(grad_out.shape()) +
                          " batch/channels do not match input_shape " + shape_str(input_shape));
    }
    const i64 N = input_shape[0], C = input_shape[1];
    const i64 in_slice = static_cast<i64>(input_shape[2] * input_shape[3] * input_shape[4]);
    const i64 out_slice = static_cast<i64>(grad_out.numel()) / (N * C);

    // validate the memo before the parallel scatter: every index must land in
    // the (n, c) slice the output element belongs to
    for (i64 nc = 0; nc < N * C; ++nc) {
        const std::size_t lo = static_cast<std::size_t>(nc * in_slice);
        const std::size_t hi = lo + static_cast<std::size_t>(in_slice);
        for (i64 i = 0; i < out_slice; ++i) {
            std::size_t idx = argmax[static_cast<std::size_t>(nc * out_slice + i)];
            if (idx < lo || idx >= hi) {
                throw param_error("argmax memo entry " + std::to_string(idx) +
                                  " is inconsistent with input shape " + shape_str(input_shape));
            }
        }
    }

    Tensor<T> grad_in(input_shape);
    T* gi = grad_in.data();
    const T* go = grad_out.data();
#pragma omp parallel for schedule(static)
    for (i64 nc = 0; nc < N * C; ++nc) {
        for (i64 i = 0; i < out_slice; ++i) {
            const std::size_t oi = static_cast<std::size_t>(nc * out_slice + i);
            gi[argmax[oi]] += go[oi];
        }
    }
    return grad_in;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    const T* x = input.data();
    T* o = out.data();
    const i64 n = input.numel();
#pragma omp parallel for schedule(static) if (n > 32768)
    for (i64 i = 0; i < n; ++i) {
        o[i] = x[i] > T(0) ? x[i] : T(0);
    }
    return out;
}

// subgradient at exactly zero is zero
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input) {
    check_same_shape("relu_backward", grad_out, saved_input);
    Tensor<T> out(grad_out.shape());
    const T* g = grad_out.data();
    const T* x = saved_input.data();
    T* o = out.data();
    const i64 n = grad_out.numel();
#pragma omp parallel for schedule(static) if (n > 32768)
    for (i64 i = 0; i < n; ++i) {
        o[i] = x[i] > T(0) ? g[i] : T(0);
    }
    return out;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>& bias) {
    detail::require_rank("linear input", input.rank(), 2);
    detail::require_rank("linear weights", weights.rank(), 2);
    detail::require_rank("linear bias", bias.rank(), 1);
    if (input.extent(1) != weights.extent(1)) {
        throw shape_error("linear inner dimensions do not match: input " +
                          shape_str(input.shape()) + " vs weights " + shape_str(weights.shape()));
    }
    if (bias.extent(0) != weights.extent(0)) {
        throw shape_error("linear bias " + shape_str(bias.shape()) + " does not match weights " +
                          shape_str(weights.shape()));
    }
    const i64 N = input.extent(0), FI = input.extent(1), FO = weights.extent(0);
    Tensor<T> out({static_cast<std::size_t>(N), static_cast<std::size_t>(FO)});
    const T* x0 = input.data();
    const T* w0 = weights.data();
    const T* b0 = bias.data();
    T* o0 = out.data();
#pragma omp parallel for collapse(2) schedule(static) if (N * FO > 64)
    for (i64 n = 0; n < N; ++n) {
        for (i64 fo = 0; fo < FO; ++fo) {
            const T* x = x0 + n * FI;
            const T* w = w0 + fo * FI;
            double acc = static_cast<double>(b0[fo]);
            for (i64 fi = 0; fi < FI; ++fi) acc += static_cast<double>(x[fi]) * w[fi];
            o0[n * FO + fo] = static_cast<T>(acc);
        }
    }
    return out;
}

template <typename T>
struct LinearGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weights) {
    detail::require_rank("linear grad_out", grad_out.rank(), 2);
    const i64 N = input.extent(0), FI = input.extent(1), FO = weights.extent(0);
    if (grad_out.extent(0) != static_cast<std::size_t>(N) ||
        grad_out.extent(1) != static_cast<std::size_t>(FO)) {
        throw shape_error("linear grad_out shape " + shape_str(grad_out.shape()) +
                          " does not match output [" + std::to_string(N) + ", " +
                          std::to_string(FO) + "]");
    }
    LinearGrads<T> g;
    g.input = Tensor<T>(input.shape());
    g.weights = Tensor<T>(weights.shape());
    g.bias = Tensor<T>({static_cast<std::size_t>(FO)});
    const T* go0 = grad_out.data();
    const T* x0 = input.data();
    const T* w0 = weights.data();

    T* gi0 = g.input.data();
#pragma omp parallel for schedule(static)
    for (i64 n = 0; n < N; ++n) {
        T* gi = gi0 + n * FI;
        const T* go = go0 + n * FO;
        for (i64 fo = 0; fo < FO; ++fo) {
            const T gv = go[fo];
            const T* w = w0 + fo * FI;
            for (i64 fi = 0; fi < FI; ++fi) gi[fi] += gv * w[fi];
        }
    }

    T* gw0 = g.weights.data();
    T* gb = g.bias.data();
#pragma omp parallel for schedule(static)
    for (i64 fo = 0; fo < FO; ++fo) {
        T* gw = gw0 + fo * FI;
        double bacc = 0.0;
        for (i64 n = 0; n < N; ++n) {
            const T gv = go0[n * FO + fo];
            bacc += static_cast<double>(gv);
            const T* x = x0 + n * FI;
            for (i64 fi = 0; fi < FI; ++fi) gw[fi] += gv * x[fi];
        }
        gb[fo] = static_cast<T>(bacc);
    }
    return g;
}

template <typename T>
struct DropoutResult {
    Tensor<T> output;
    std::vector<std::uint8_t> mask; // 1 = kept
};

// Inverted dropout: survivors are scaled by 1/(1-p) at train time so eval is
// the exact identity.
template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double p, Mode mode, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw param_error("dropout probability must lie in [0, 1), got " + std::to_string(p));
    }
    DropoutResult<T> r;
    r.output = Tensor<T>(input.shape());
    r.mask.assign(input.numel(), 1);
    const i64 n = input.numel();
    const T* x = input.data();
    T* o = r.output.data();
    if (mode == Mode::eval || p == 0.0) {
        std::memcpy(o, x, sizeof(T) * static_cast<std::size_t>(n));
        return r;
    }
    // mask drawn serially so the stream depends only on the rng state
    std::uint8_t* m = r.mask.data();
    for (i64 i = 0; i < n; ++i) {
        m[i] = rng.uniform() >= p ? 1 : 0;
    }
    const T scale = static_cast<T>(1.0 / (1.0 - p));
#pragma omp parallel for schedule(static) if (n > 32768)
    for (i64 i = 0; i < n; ++i) {
        o[i] = m[i] ? x[i] * scale : T(0);
    }
    return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const std::vector<std::uint8_t>& mask,
                           double p) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw param_error("dropout probability must lie in [0, 1), got " + std::to_string(p));
    }
    if (mask.size() != grad_out.numel()) {
        throw shape_error("dropout mask length " + std::to_string(mask.size()) +
                          " does not match grad_out shape " + shape_str(grad_out.shape()));
    }
    Tensor<T> out(grad_out.shape());
    const T* g = grad_out.data();
    const std::uint8_t* m = mask.data();
    T* o = out.data();
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    const i64 n = grad_out.numel();
#pragma omp parallel for schedule(static) if (n > 32768)
    for (i64 i = 0; i < n; ++i) {
        o[i] = m[i] ? g[i] * scale : T(0);
    }
    return out;
}

// Row-major flatten of the feature tensor per sample with the time scalar
// appended as the last column.
template <typename T>
Tensor<T> flatten_concat(const Tensor<T>& features, const Tensor<T>& time) {
    if (features.rank() < 2) {
        throw shape_error("flatten_concat features must have rank >= 2, got " +
                          shape_str(features.shape()));
    }
    if (time.rank() != 2 || time.extent(1) != 1) {
        throw shape_error("flatten_concat time must have shape [N, 1], got " +
                          shape_str(time.shape()));
    }
    const std::size_t N = features.extent(0);
    if (time.extent(0) != N) {
        throw shape_error("flatten_concat batch mismatch: features " +
                          shape_str(features.shape()) + " vs time " + shape_str(time.shape()));
    }
    const std::size_t F = features.numel() / N;
    Tensor<T> out({N, F + 1});
    const T* f = features.data();
    const T* t = time.data();
    T* o = out.data();
    for (std::size_t n = 0; n < N; ++n) {
        std::memcpy(o + n * (F + 1), f + n * F, sizeof(T) * F);
        o[n * (F + 1) + F] = t[n];
    }
    return out;
}

template <typename T>
struct SplitGrads {
    Tensor<T> features;
    Tensor<T> time;
};

template <typename T>
SplitGrads<T> flatten_concat_backward(const Tensor<T>& grad_out,
                                      const std::vector<std::size_t>& features_shape) {
    if (features_shape.size() < 2) {
        throw shape_error("flatten_concat features_shape must have rank >= 2");
    }
    const std::size_t N = features_shape[0];
    std::size_t F = 1;
    for (std::size_t i = 1; i < features_shape.size(); ++i) F *= features_shape[i];
    if (grad_out.rank() != 2 || grad_out.extent(0) != N || grad_out.extent(1) != F + 1) {
        throw shape_error("flatten_concat grad_out shape " + shape_str(grad_out.shape()) +
                          " does not match features " + shape_str(features_shape) + " plus time");
    }
    SplitGrads<T> g;
    g.features = Tensor<T>(features_shape);
    g.time = Tensor<T>({N, 1});
    const T* go = grad_out.data();
    T* gf = g.features.data();
    T* gt = g.time.data();
    for (std::size_t n = 0; n < N; ++n) {
        std::memcpy(gf + n * F, go + n * (F + 1), sizeof(T) * F);
        gt[n] = go[n * (F + 1) + F];
    }
    return g;
}

} // namespace cogtraj
