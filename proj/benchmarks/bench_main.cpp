#include <coconet/backbone.hpp>
#include <coconet/fusion_net.hpp>
#include <coconet/losses.hpp>
#include <coconet/metrics.hpp>
#include <coconet/nn.hpp>

#include <benchmark/benchmark.h>

#include <random>

using namespace coconet;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    Tensor t(s);
    for (double& v : t.values()) v = d(rng);
    return t;
}

ImagePlane random_u8(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(0, 255);
    std::vector<double> v(static_cast<std::size_t>(n) * n);
    for (double& x : v) x = d(rng);
    return ImagePlane(n, n, std::move(v), RangeTag::Unit8);
}

const Backbone& backbone() {
    static const Backbone b = Backbone::deterministic();
    return b;
}

} // namespace

static void BM_Conv3x3Forward(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int n = static_cast<int>(state.range(1));
    Conv2d conv("conv", c, c, 3);
    std::mt19937_64 rng(1);
    conv.init(rng);
    const Tensor x = random_tensor({1, c, n, n}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(n) * n);
}
BENCHMARK(BM_Conv3x3Forward)->Args({32, 64})->Args({128, 32})->Unit(benchmark::kMillisecond);

static void BM_Conv3x3ForwardBackward(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int n = static_cast<int>(state.range(1));
    Conv2d conv("conv", c, c, 3);
    std::mt19937_64 rng(1);
    conv.init(rng);
    const Tensor x = random_tensor({1, c, n, n}, 3);
    const Tensor dy = random_tensor({1, c, n, n}, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv.forward(x));
        benchmark::DoNotOptimize(conv.backward(dy));
    }
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Args({64, 32})->Unit(benchmark::kMillisecond);

static void BM_ChannelAttention(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int n = static_cast<int>(state.range(1));
    ChannelAttention ca("ca", c);
    std::mt19937_64 rng(5);
    ca.init(rng);
    const Tensor x = random_tensor({1, c, n, n}, 6);
    for (auto _ : state) benchmark::DoNotOptimize(ca.forward(x));
}
BENCHMARK(BM_ChannelAttention)->Args({64, 64})->Args({256, 16})->Unit(benchmark::kMillisecond);

static void BM_ScalarMetrics(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const ImagePlane v = random_u8(n, 7), r = random_u8(n, 8), f = random_u8(n, 9);
    for (auto _ : state) {
        benchmark::DoNotOptimize(entropy(f));
        benchmark::DoNotOptimize(average_gradient(f));
        benchmark::DoNotOptimize(spatial_frequency(f));
        benchmark::DoNotOptimize(standard_deviation(f));
        benchmark::DoNotOptimize(scd(v, r, f));
    }
}
BENCHMARK(BM_ScalarMetrics)->Arg(256)->Unit(benchmark::kMicrosecond);

static void BM_Ssim(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const ImagePlane x = random_u8(n, 10), y = random_u8(n, 11);
    for (auto _ : state) benchmark::DoNotOptimize(ssim(x, y));
}
BENCHMARK(BM_Ssim)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_Vif(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const ImagePlane v = random_u8(n, 12), r = random_u8(n, 13), f = random_u8(n, 14);
    for (auto _ : state) benchmark::DoNotOptimize(vif_fusion(v, r, f));
}
BENCHMARK(BM_Vif)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_ContrastiveTaps(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Tensor x = random_tensor({1, 1, n, n}, 15);
    for (auto _ : state) benchmark::DoNotOptimize(backbone().extract_contrastive_taps(x));
}
BENCHMARK(BM_ContrastiveTaps)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_ForwardFuse(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const FusionNet net({}, 16);
    const ImagePlane ir = random_u8(n, 17), vis = random_u8(n, 18);
    for (auto _ : state) benchmark::DoNotOptimize(net.forward_fuse(backbone(), ir, vis));
}
BENCHMARK(BM_ForwardFuse)->Arg(32)->Unit(benchmark::kMillisecond)->Iterations(2);
BENCHMARK_MAIN();
