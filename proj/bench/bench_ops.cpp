// Times the parallel kernels against the serial reference implementations
// and checks they agree. Usage: bench_ops [repeats]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cogtraj/ops.hpp"
#include "cogtraj/ops_serial.hpp"
#include "cogtraj/rng.hpp"

using namespace cogtraj;

namespace {

template <typename F>
double time_best_of(int repeats, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t[i] = static_cast<T>(rng.uniform() * 2.0 - 1.0);
    }
    return t;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

void report(const char* name, double serial_s, double parallel_s, double diff) {
    std::printf("%-24s serial %8.4fs  parallel %8.4fs  speedup %5.2fx  max|diff| %.3e\n", name,
                serial_s, parallel_s, serial_s / parallel_s, diff);
}

} // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::stoi(argv[1]) : 3;
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: disabled\n");
#endif

    Rng rng(42);

    {
        // desk-scale first conv block: 4x1x32^3 -> 4x8x32^3
        Conv3dSpec spec;
        spec.in_channels = 1;
        spec.out_channels = 8;
        spec.padding = {1, 1, 1};
        Tensor<float> x = random_tensor<float>({4, 1, 32, 32, 32}, rng);
        Tensor<float> w = random_tensor<float>({8, 1, 3, 3, 3}, rng);
        Tensor<float> b = random_tensor<float>({8}, rng);
        Tensor<float> out_s, out_p;
        const double ts = time_best_of(repeats, [&] { out_s = serial::conv3d_forward(x, w, b, spec); });
        const double tp = time_best_of(repeats, [&] { out_p = conv3d_forward(x, w, b, spec); });
        report("conv3d fwd 1->8 @32^3", ts, tp, max_abs_diff(out_s, out_p));
    }
    {
        // desk-scale second conv block: 4x8x16^3 -> 4x16x16^3
        Conv3dSpec spec;
        spec.in_channels = 8;
        spec.out_channels = 16;
        spec.padding = {1, 1, 1};
        Tensor<float> x = random_tensor<float>({4, 8, 16, 16, 16}, rng);
        Tensor<float> w = random_tensor<float>({16, 8, 3, 3, 3}, rng);
        Tensor<float> b = random_tensor<float>({16}, rng);
        Tensor<float> out_s, out_p;
        const double ts = time_best_of(repeats, [&] { out_s = serial::conv3d_forward(x, w, b, spec); });
        const double tp = time_best_of(repeats, [&] { out_p = conv3d_forward(x, w, b, spec); });
        report("conv3d fwd 8->16 @16^3", ts, tp, max_abs_diff(out_s, out_p));

        Tensor<float> go = random_tensor<float>({4, 16, 16, 16, 16}, rng);
        Conv3dGrads<float> gs, gp;
        const double bs = time_best_of(repeats, [&] { gs = serial::conv3d_backward(go, x, w, spec); });
        const double bp = time_best_of(repeats, [&] { gp = conv3d_backward(go, x, w, spec); });
        const double diff = std::max({max_abs_diff(gs.input, gp.input),
                                      max_abs_diff(gs.weights, gp.weights),
                                      max_abs_diff(gs.bias, gp.bias)});
        report("conv3d bwd 8->16 @16^3", bs, bp, diff);
    }
    {
        Pool3dSpec spec;
        Tensor<float> x = random_tensor<float>({4, 8, 32, 32, 32}, rng);
        PoolResult<float> rs, rp;
        const double ts = time_best_of(repeats, [&] { rs = serial::maxpool3d_forward(x, spec); });
        const double tp = time_best_of(repeats, [&] { rp = maxpool3d_forward(x, spec); });
        report("maxpool3d fwd @32^3", ts, tp, max_abs_diff(rs.output, rp.output));
    }
    {
        Tensor<float> x = random_tensor<float>({64, 2049}, rng);
        Tensor<float> w = random_tensor<float>({64, 2049}, rng);
        Tensor<float> b = random_tensor<float>({64}, rng);
        Tensor<float> out_s, out_p;
        const double ts = time_best_of(repeats, [&] { out_s = serial::linear_forward(x, w, b); });
        const double tp = time_best_of(repeats, [&] { out_p = linear_forward(x, w, b); });
        report("linear fwd 2049->64", ts, tp, max_abs_diff(out_s, out_p));
    }
    return 0;
}
