#pragma once

// Straight-from-the-definition reference kernels. No threading, no loop
// restructuring: conv walks every output cell and every kernel tap with an
// explicit in-bounds test. Tests compare the production kernels in
// cogtraj/ops.hpp against these, and the benchmark measures the gap.

#include <cstdint>
#include <vector>

#include "cogtraj/ops.hpp"
#include "cogtraj/tensor.hpp"

namespace cogtraj::serial {

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
    for (i64 n = 0; n < N; ++n) {
        for (i64 k = 0; k < K; ++k) {
            for (i64 od = 0; od < OD; ++od) {
                for (i64 oh = 0; oh < OH; ++oh) {
                    for (i64 ow = 0; ow < OW; ++ow) {
                        double acc = static_cast<double>(
                            bias[static_cast<std::size_t>(k)]);
                        for (i64 c = 0; c < C; ++c) {
                            for (i64 a = 0; a < kd; ++a) {
                                const i64 id = od * sd + a - pd;
                                if (id < 0 || id >= D) continue;
                                for (i64 b = 0; b < kh; ++b) {
                                    const i64 ih = oh * sh + b - ph;
                                    if (ih < 0 || ih >= H) continue;
                                    for (i64 q = 0; q < kw; ++q) {
                                        const i64 iw = ow * sw + q - pw;
                                        if (iw < 0 || iw >= W) continue;
                                        const T xv = input.data()[(((n * C + c) * D + id) * H + ih) * W + iw];
                                        const T wv = weights.data()[(((k * C + c) * kd + a) * kh + b) * kw + q];
                                        acc += static_cast<double>(xv) * static_cast<double>(wv);
                                    }
                                }
                            }
                        }
                        out.data()[(((n * K + k) * OD + od) * OH + oh) * OW + ow] =
                            static_cast<T>(acc);
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weights, const Conv3dSpec& spec) {
    const i64 N = input.extent(0), C = input.extent(1);
    const i64 D = input.extent(2), H = input.extent(3), W = input.extent(4);
    const i64 K = spec.out_channels;
    auto oe = spec.output_extent({input.extent(2), input.extent(3), input.extent(4)});
    const i64 OD = oe[0], OH = oe[1], OW = oe[2];
    const i64 kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
    const i64 sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
    const i64 pd = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];

    Conv3dGrads<T> g;
    g.input = Tensor<T>(input.shape());
    g.weights = Tensor<T>(weights.shape());
    g.bias = Tensor<T>({static_cast<std::size_t>(K)});
    for (i64 n = 0; n < N; ++n) {
        for (i64 k = 0; k < K; ++k) {
            for (i64 od = 0; od < OD; ++od) {
                for (i64 oh = 0; oh < OH; ++oh) {
                    for (i64 ow = 0; ow < OW; ++ow) {
                        const T gv = grad_out.data()[(((n * K + k) * OD + od) * OH + oh) * OW + ow];
                        g.bias[static_cast<std::size_t>(k)] += gv;
                        for (i64 c = 0; c < C; ++c) {
                            for (i64 a = 0; a < kd; ++a) {
                                const i64 id = od * sd + a - pd;
                                if (id < 0 || id >= D) continue;
                                for (i64 b = 0; b < kh; ++b) {
                                    const i64 ih = oh * sh + b - ph;
                                    if (ih < 0 || ih >= H) continue;
                                    for (i64 q = 0; q < kw; ++q) {
                                        const i64 iw = ow * sw + q - pw;
                                        if (iw < 0 || iw >= W) continue;
                                        const std::size_t xi = (((n * C + c) * D + id) * H + ih) * W + iw;
                                        const std::size_t wi = (((k * C + c) * kd + a) * kh + b) * kw + q;
                                        g.weights.data()[wi] += gv * input.data()[xi];
                                        g.input.data()[xi] += gv * weights.data()[wi];
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
PoolResult<T> maxpool3d_forward(const Tensor<T>& input, const Pool3dSpec& spec) {
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
    std::size_t oi = 0;
    for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
            for (i64 od = 0; od < OD; ++od) {
                for (i64 oh = 0; oh < OH; ++oh) {
                    for (i64 ow = 0; ow < OW; ++ow, ++oi) {
                        bool first = true;
                        T best_v{};
                        std::size_t best = 0;
                        for (i64 d = od * sd; d < od * sd + wd; ++d) {
                            for (i64 h = oh * sh; h < oh * sh + wh; ++h) {
                                for (i64 w = ow * sw; w < ow * sw + ww; ++w) {
                                    const std::size_t xi = (((n * C + c) * D + d) * H + h) * W + w;
                                    if (first || input.data()[xi] > best_v) {
                                        best_v = input.data()[xi];
                                        best = xi;
                                        first = false;
                                    }
                                }
                            }
                        }
                        r.output.data()[oi] = best_v;
                        r.argmax[oi] = best;
                    }
                }
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>& bias) {
    const i64 N = input.extent(0), FI = input.extent(1), FO = weights.extent(0);
    Tensor<T> out({static_cast<std::size_t>(N), static_cast<std::size_t>(FO)});
    for (i64 n = 0; n < N; ++n) {
        for (i64 fo = 0; fo < FO; ++fo) {
            double acc = static_cast<double>(bias[static_cast<std::size_t>(fo)]);
            for (i64 fi = 0; fi < FI; ++fi) {
                acc += static_cast<double>(input.data()[n * FI + fi]) *
                       static_cast<double>(weights.data()[fo * FI + fi]);
            }
            out.data()[n * FO + fo] = static_cast<T>(acc);
        }
    }
    return out;
}

} // namespace cogtraj::serial
