#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "cogtraj/ops.hpp"
#include "cogtraj/ops_serial.hpp"
#include "cogtraj/rng.hpp"
#include "testutil.hpp"

using namespace cogtraj;
using testutil::dot_all;
using testutil::fd_check;
using testutil::random_tensor;

namespace {

Conv3dSpec small_conv(std::size_t cin, std::size_t cout) {
    Conv3dSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.padding = {1, 1, 1};
    return s; // 3x3x3 kernel, stride 1, pad 1
}

} // namespace

TEST_SUITE("ops") {

// ---------------------------------------------------------------- conv3d

TEST_CASE("conv3d identity kernel reproduces the input") {
    // single-tap kernel (1x1x1, no padding) with weight 1 is the identity
    Conv3dSpec s;
    s.in_channels = 1;
    s.out_channels = 1;
    s.kernel = {1, 1, 1};
    s.padding = {0, 0, 0};
    Rng rng(7);
    Tensor<double> x = random_tensor({2, 1, 3, 4, 5}, rng);
    Tensor<double> w = Tensor<double>::from_data({1, 1, 1, 1, 1}, {1.0});
    Tensor<double> b({1});
    Tensor<double> y = conv3d_forward(x, w, b, s);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv3d all-ones kernel sums the padded neighborhood") {
    // 2x2x2 input, 3^3 ones kernel, pad 1: every output is the whole-input sum
    Conv3dSpec s = small_conv(1, 1);
    Tensor<double> x = Tensor<double>::from_data({1, 1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor<double> w({1, 1, 3, 3, 3}, 1.0);
    Tensor<double> b({1});
    Tensor<double> y = conv3d_forward(x, w, b, s);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(36.0));
}

TEST_CASE("conv3d matches the serial oracle on random instances") {
    Rng rng(11);
    for (int it = 0; it < 25; ++it) {
        const std::size_t n = 1 + rng.below(3), cin = 1 + rng.below(3), cout = 1 + rng.below(4);
        const std::size_t d = 3 + rng.below(4), h = 3 + rng.below(4), w = 3 + rng.below(4);
        Conv3dSpec s;
        s.in_channels = cin;
        s.out_channels = cout;
        s.kernel = {1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
        s.stride = {1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)};
        s.padding = {rng.below(2), rng.below(2), rng.below(2)};
        if (s.kernel[0] > d + 2 * s.padding[0] || s.kernel[1] > h + 2 * s.padding[1] ||
            s.kernel[2] > w + 2 * s.padding[2]) {
            continue;
        }
        Tensor<double> x = random_tensor({n, cin, d, h, w}, rng);
        Tensor<double> wt = random_tensor({cout, cin, s.kernel[0], s.kernel[1], s.kernel[2]}, rng);
        Tensor<double> b = random_tensor({cout}, rng);
        Tensor<double> got = conv3d_forward(x, wt, b, s);
        Tensor<double> want = serial::conv3d_forward(x, wt, b, s);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.numel(); ++i) {
            CHECK(std::abs(got[i] - want[i]) < 1e-12);
        }
    }
}

TEST_CASE("conv3d backward matches the serial oracle") {
    Rng rng(13);
    Conv3dSpec s = small_conv(2, 3);
    s.stride = {1, 2, 1};
    Tensor<double> x = random_tensor({2, 2, 4, 5, 4}, rng);
    Tensor<double> w = random_tensor({3, 2, 3, 3, 3}, rng);
    auto oe = s.output_extent({4, 5, 4});
    Tensor<double> go = random_tensor({2, 3, oe[0], oe[1], oe[2]}, rng);
    Conv3dGrads<double> got = conv3d_backward(go, x, w, s);
    Conv3dGrads<double> want = serial::conv3d_backward(go, x, w, s);
    for (std::size_t i = 0; i < got.input.numel(); ++i) {
        CHECK(std::abs(got.input[i] - want.input[i]) < 1e-12);
    }
    for (std::size_t i = 0; i < got.weights.numel(); ++i) {
        CHECK(std::abs(got.weights[i] - want.weights[i]) < 1e-12);
    }
    for (std::size_t i = 0; i < got.bias.numel(); ++i) {
        CHECK(std::abs(got.bias[i] - want.bias[i]) < 1e-12);
    }
}

TEST_CASE("conv3d gradients match finite differences") {
    Rng rng(17);
    Conv3dSpec s = small_conv(2, 2);
    Tensor<double> x = random_tensor({1, 2, 3, 3, 3}, rng);
    Tensor<double> w = random_tensor({2, 2, 3, 3, 3}, rng);
    Tensor<double> b = random_tensor({2}, rng);
    Tensor<double> r = random_tensor({1, 2, 3, 3, 3}, rng); // fixed functional weights

    auto loss = [&] { return dot_all(conv3d_forward(x, w, b, s), r); };
    Conv3dGrads<double> g = conv3d_backward(r, x, w, s);

    auto rep_x = fd_check(x, g.input, loss, 1e-6);
    CHECK_MESSAGE(rep_x.ok(), rep_x.worst);
    auto rep_w = fd_check(w, g.weights, loss, 1e-6);
    CHECK_MESSAGE(rep_w.ok(), rep_w.worst);
    auto rep_b = fd_check(b, g.bias, loss, 1e-6);
    CHECK_MESSAGE(rep_b.ok(), rep_b.worst);
}

TEST_CASE("conv3d validates shapes with both shapes named") {
    Conv3dSpec s = small_conv(2, 3);
    Tensor<double> x({1, 1, 4, 4, 4}); // wrong channel count
    Tensor<double> w({3, 2, 3, 3, 3});
    Tensor<double> b({3});
    CHECK_THROWS_AS(conv3d_forward(x, w, b, s), shape_error);

    Tensor<double> x2({1, 2, 4, 4, 4});
    Tensor<double> wbad({3, 2, 3, 3, 2});
    CHECK_THROWS_AS(conv3d_forward(x2, wbad, b, s), shape_error);

    // kernel larger than padded input names the axis
    Conv3dSpec tall = small_conv(1, 1);
    tall.kernel = {9, 3, 3};
    Tensor<double> x3({1, 1, 4, 4, 4});
    Tensor<double> w3({1, 1, 9, 3, 3});
    Tensor<double> b3({1});
    CHECK_THROWS_WITH_AS(conv3d_forward(x3, w3, b3, tall),
                         doctest::Contains("spatial axis 0"), shape_error);
}

// ------------------------------------------------------------- maxpool3d

TEST_CASE("maxpool3d picks window maxima and the first occurrence on ties") {
    // 1x1x2x2x2 volume, 2^3 window: single output = max of all 8
    Tensor<double> x = Tensor<double>::from_data({1, 1, 2, 2, 2}, {1, 7, 3, 7, 5, 6, 2, 0});
    Pool3dSpec s;
    PoolResult<double> r = maxpool3d_forward(x, s);
    CHECK(r.output.numel() == 1);
    CHECK(r.output[0] == 7.0);
    CHECK(r.argmax[0] == 1); // first 7 in row-major order, not index 3
}

TEST_CASE("maxpool3d matches the serial oracle on random instances") {
    Rng rng(19);
    for (int it = 0; it < 25; ++it) {
        const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3);
        const std::size_t d = 2 + rng.below(5), h = 2 + rng.below(5), w = 2 + rng.below(5);
        Pool3dSpec s;
        s.window = {1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)};
        s.stride = {1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)};
        if (s.window[0] > d || s.window[1] > h || s.window[2] > w) continue;
        Tensor<double> x = random_tensor({n, c, d, h, w}, rng);
        PoolResult<double> got = maxpool3d_forward(x, s);
        PoolResult<double> want = serial::maxpool3d_forward(x, s);
        REQUIRE(got.output.shape() == want.output.shape());
        for (std::size_t i = 0; i < got.output.numel(); ++i) {
            CHECK(got.output[i] == want.output[i]);
            CHECK(got.argmax[i] == want.argmax[i]);
        }
    }
}

TEST_CASE("maxpool3d backward routes gradient to the argmax and sums overlaps") {
    Rng rng(23);
    Tensor<double> x = random_tensor({1, 1, 4, 4, 4}, rng);
    Pool3dSpec s;
    s.window = {2, 2, 2};
    s.stride = {1, 1, 1}; // overlapping windows
    PoolResult<double> fwd = maxpool3d_forward(x, s);
    Tensor<double> r = random_tensor(fwd.output.shape(), rng);
    Tensor<double> g = maxpool3d_backward(r, fwd.argmax, x.shape());

    auto loss = [&] { return dot_all(maxpool3d_forward(x, s).output, r); };
    auto rep = fd_check(x, g, loss, 1e-6);
    CHECK_MESSAGE(rep.ok(), rep.worst);
}

TEST_CASE("maxpool3d backward validates the argmax memo") {
    Tensor<double> go({1, 1, 1, 1, 1}, 1.0);
    std::vector<std::size_t> bad_memo{999};
    CHECK_THROWS_AS(maxpool3d_backward(go, bad_memo, {1, 1, 2, 2, 2}), param_error);

    std::vector<std::size_t> wrong_len{0, 1};
    CHECK_THROWS_AS(maxpool3d_backward(go, wrong_len, {1, 1, 2, 2, 2}), param_error);
}

// ------------------------------------------------------------------ relu

TEST_CASE("relu clamps negatives and passes positives") {
    Tensor<double> x = Tensor<double>::from_data({5}, {-2, -0.5, 0, 0.5, 2});
    Tensor<double> y = relu_forward(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 0.0);
    CHECK(y[3] == 0.5);
    CHECK(y[4] == 2.0);

    Tensor<double> go({5}, 1.0);
    Tensor<double> g = relu_backward(go, x);
    CHECK(g[0] == 0.0);
    CHECK(g[2] == 0.0); // subgradient 0 at exactly 0
    CHECK(g[3] == 1.0);
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
    Rng rng(29);
    Tensor<double> x = random_tensor({40}, rng);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (std::abs(x[i]) < 1e-3) x[i] += 0.01; // keep clear of the kink
    }
    Tensor<double> r = random_tensor({40}, rng);
    Tensor<double> g = relu_backward(r, x);
    auto loss = [&] { return dot_all(relu_forward(x), r); };
    auto rep = fd_check(x, g, loss, 1e-6);
    CHECK_MESSAGE(rep.ok(), rep.worst);
}

// ---------------------------------------------------------------- linear

TEST_CASE("linear hand example: [[1,2]] x [[3,4]] + [5] = [[16]]") {
    auto x = Tensor<double>::from_data({1, 2}, {1, 2});
    auto w = Tensor<double>::from_data({1, 2}, {3, 4});
    auto b = Tensor<double>::from_data({1}, {5});
    Tensor<double> y = linear_forward(x, w, b);
    CHECK(y.numel() == 1);
    CHECK(y[0] == doctest::Approx(16.0));
}

TEST_CASE("linear matches the serial oracle") {
    Rng rng(31);
    Tensor<double> x = random_tensor({5, 17}, rng);
    Tensor<double> w = random_tensor({9, 17}, rng);
    Tensor<double> b = random_tensor({9}, rng);
    Tensor<double> got = linear_forward(x, w, b);
    Tensor<double> want = serial::linear_forward(x, w, b);
    for (std::size_t i = 0; i < got.numel(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(37);
    Tensor<double> x = random_tensor({3, 7}, rng);
    Tensor<double> w = random_tensor({4, 7}, rng);
    Tensor<double> b = random_tensor({4}, rng);
    Tensor<double> r = random_tensor({3, 4}, rng);
    LinearGrads<double> g = linear_backward(r, x, w);
    auto loss = [&] { return dot_all(linear_forward(x, w, b), r); };
    auto rep_x = fd_check(x, g.input, loss, 1e-6);
    CHECK_MESSAGE(rep_x.ok(), rep_x.worst);
    auto rep_w = fd_check(w, g.weights, loss, 1e-6);
    CHECK_MESSAGE(rep_w.ok(), rep_w.worst);
    auto rep_b = fd_check(b, g.bias, loss, 1e-6);
    CHECK_MESSAGE(rep_b.ok(), rep_b.worst);
}

TEST_CASE("linear validates input width against weights") {
    Tensor<double> x({2, 3});
    Tensor<double> w({4, 5});
    Tensor<double> b({4});
    CHECK_THROWS_AS(linear_forward(x, w, b), shape_error);
}

// --------------------------------------------------------------- dropout

TEST_CASE("dropout in eval mode or with p=0 is the identity") {
    Rng rng(41);
    Tensor<double> x = random_tensor({100}, rng);
    DropoutResult<double> e = dropout_forward(x, 0.5, Mode::eval, rng);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(e.output[i] == x[i]);
    CHECK(std::all_of(e.mask.begin(), e.mask.end(), [](std::uint8_t m) { return m == 1; }));

    DropoutResult<double> z = dropout_forward(x, 0.0, Mode::train, rng);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(z.output[i] == x[i]);
}

TEST_CASE("train-mode dropout zeroes dropped units and rescales survivors") {
    Rng rng(43);
    Tensor<double> x({2000}, 1.0);
    const double p = 0.5;
    DropoutResult<double> r = dropout_forward(x, p, Mode::train, rng);
    REQUIRE(r.mask.size() == x.numel());
    std::size_t kept = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (r.mask[i]) {
            ++kept;
            CHECK(r.output[i] == doctest::Approx(1.0 / (1.0 - p)));
        } else {
            CHECK(r.output[i] == 0.0);
        }
    }
    // survivor fraction concentrates near 1-p
    CHECK(static_cast<double>(kept) / static_cast<double>(x.numel()) ==
          doctest::Approx(1.0 - p).epsilon(0.1));

    // expectation is preserved: mean of output ~= mean of input
    double mean = 0.0;
    for (std::size_t i = 0; i < r.output.numel(); ++i) mean += r.output[i];
    mean /= static_cast<double>(r.output.numel());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("dropout backward applies the saved mask and scale") {
    Rng rng(47);
    Tensor<double> x = random_tensor({50}, rng);
    const double p = 0.3;
    DropoutResult<double> fwd = dropout_forward(x, p, Mode::train, rng);
    Tensor<double> go = random_tensor({50}, rng);
    Tensor<double> g = dropout_backward(go, fwd.mask, p);
    for (std::size_t i = 0; i < g.numel(); ++i) {
        const double want = fwd.mask[i] ? go[i] / (1.0 - p) : 0.0;
        CHECK(g[i] == doctest::Approx(want));
    }
}

TEST_CASE("dropout rejects p outside [0,1)") {
    Rng rng(53);
    Tensor<double> x({4}, 1.0);
    CHECK_THROWS_AS(dropout_forward(x, 1.0, Mode::train, rng), param_error);
    CHECK_THROWS_AS(dropout_forward(x, -0.1, Mode::train, rng), param_error);
}

TEST_CASE("dropout is deterministic given the rng seed") {
    Tensor<double> x({64}, 1.0);
    Rng a(99), b(99);
    DropoutResult<double> ra = dropout_forward(x, 0.4, Mode::train, a);
    DropoutResult<double> rb = dropout_forward(x, 0.4, Mode::train, b);
    CHECK(ra.mask == rb.mask);
}

// -------------------------------------------------------- flatten_concat

TEST_CASE("flatten_concat appends time as the last feature") {
    auto f = Tensor<double>::from_data({2, 1, 1, 1, 2}, {1, 2, 3, 4});
    auto t = Tensor<double>::from_data({2, 1}, {0.5, 1.0});
    Tensor<double> z = flatten_concat(f, t);
    REQUIRE(z.shape() == std::vector<std::size_t>{2, 3});
    CHECK(z(0, 0) == 1.0);
    CHECK(z(0, 1) == 2.0);
    CHECK(z(0, 2) == 0.5);
    CHECK(z(1, 2) == 1.0);
}

TEST_CASE("flatten_concat backward splits feature and time gradients") {
    Rng rng(59);
    Tensor<double> f = random_tensor({2, 2, 1, 2, 1}, rng);
    Tensor<double> t = random_tensor({2, 1}, rng);
    Tensor<double> z = flatten_concat(f, t);
    Tensor<double> go = random_tensor(z.shape(), rng);
    SplitGrads<double> g = flatten_concat_backward(go, f.shape());
    REQUIRE(g.features.shape() == f.shape());
    REQUIRE(g.time.shape() == t.shape());
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(g.features[n * 4 + i] == go(n, i));
        }
        CHECK(g.time[n] == go(n, 4));
    }
}

TEST_CASE("flatten_concat validates batch agreement") {
    Tensor<double> f({2, 1, 1, 1, 2});
    Tensor<double> t({3, 1});
    CHECK_THROWS_AS(flatten_concat(f, t), shape_error);
}

} // TEST_SUITE
