// Throughput comparison between the OpenMP kernel drivers and their serial
// reference twins. Shapes mirror the hot paths: token matmuls, attention
// score batches, stem convolutions, and the generator's transposed stack.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "stroke/kernels.hpp"
#include "stroke/rng.hpp"

namespace k = stroke::kernels;

namespace {

std::vector<double> random_vec(int64_t n, uint64_t seed) {
    stroke::Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <bool Parallel>
void bm_matmul(benchmark::State& state) {
    const int64_t n = state.range(0);
    const auto a = random_vec(n * n, 1);
    const auto b = random_vec(n * n, 2);
    std::vector<double> c(static_cast<size_t>(n * n));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::matmul(a.data(), b.data(), c.data(), n, n, n);
        else
            k::ref::matmul(a.data(), b.data(), c.data(), n, n, n);
        benchmark::DoNotOptimize(c.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}

template <bool Parallel>
void bm_attention_scores(benchmark::State& state) {
    // [B*H, T, dh] x [B*H, T, dh]^T, the MHSA score batch
    const int64_t B = state.range(0), T = 64, dh = 16;
    const auto q = random_vec(B * T * dh, 3);
    const auto kk = random_vec(B * T * dh, 4);
    std::vector<double> s(static_cast<size_t>(B * T * T));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::bmm_nt(q.data(), kk.data(), s.data(), B, T, dh, T);
        else
            k::ref::bmm_nt(q.data(), kk.data(), s.data(), B, T, dh, T);
        benchmark::DoNotOptimize(s.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * B * T * T * dh);
}

template <bool Parallel>
void bm_conv2d(benchmark::State& state) {
    const int64_t B = 4, Cin = state.range(0), H = 32, W = 32, Cout = Cin, kh = 3;
    const auto x = random_vec(B * Cin * H * W, 5);
    const auto w = random_vec(Cout * Cin * kh * kh, 6);
    std::vector<double> y(static_cast<size_t>(B * Cout * H * W));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::conv2d(x.data(), w.data(), y.data(), B, Cin, H, W, Cout, kh, kh, 1, 1, 1);
        else
            k::ref::conv2d(x.data(), w.data(), y.data(), B, Cin, H, W, Cout, kh, kh, 1, 1, 1);
        benchmark::DoNotOptimize(y.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * B * Cout * H * W * Cin * kh * kh);
}

template <bool Parallel>
void bm_conv_transpose2d(benchmark::State& state) {
    // one generator upsampling step: double the side, halve the channels
    const int64_t B = 8, Cin = state.range(0), H = 16, W = 16, Cout = Cin / 2, kh = 4;
    const auto x = random_vec(B * Cin * H * W, 7);
    const auto w = random_vec(Cin * Cout * kh * kh, 8);
    std::vector<double> y(static_cast<size_t>(B * Cout * (2 * H) * (2 * W)));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::conv_transpose2d(x.data(), w.data(), y.data(), B, Cin, H, W, Cout, kh, kh, 2, 1);
        else
            k::ref::conv_transpose2d(x.data(), w.data(), y.data(), B, Cin, H, W, Cout, kh, kh, 2, 1);
        benchmark::DoNotOptimize(y.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * B * Cin * H * W * Cout * kh * kh);
}

template <bool Parallel>
void bm_softmax_rows(benchmark::State& state) {
    const int64_t rows = state.range(0), n = 64;
    const auto x = random_vec(rows * n, 9);
    std::vector<double> y(static_cast<size_t>(rows * n));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::softmax_rows(x.data(), y.data(), rows, n);
        else
            k::ref::softmax_rows(x.data(), y.data(), rows, n);
        benchmark::DoNotOptimize(y.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * rows * n);
}

}  // namespace

BENCHMARK_TEMPLATE(bm_matmul, true)->Name("matmul/omp")->Arg(128)->Arg(256);
BENCHMARK_TEMPLATE(bm_matmul, false)->Name("matmul/serial")->Arg(128)->Arg(256);
BENCHMARK_TEMPLATE(bm_attention_scores, true)->Name("attention_scores/omp")->Arg(16)->Arg(64);
BENCHMARK_TEMPLATE(bm_attention_scores, false)->Name("attention_scores/serial")->Arg(16)->Arg(64);
BENCHMARK_TEMPLATE(bm_conv2d, true)->Name("conv2d/omp")->Arg(16)->Arg(32);
BENCHMARK_TEMPLATE(bm_conv2d, false)->Name("conv2d/serial")->Arg(16)->Arg(32);
BENCHMARK_TEMPLATE(bm_conv_transpose2d, true)->Name("conv_transpose2d/omp")->Arg(32)->Arg(64);
BENCHMARK_TEMPLATE(bm_conv_transpose2d, false)->Name("conv_transpose2d/serial")->Arg(32)->Arg(64);
BENCHMARK_TEMPLATE(bm_softmax_rows, true)->Name("softmax_rows/omp")->Arg(256)->Arg(1024);
BENCHMARK_TEMPLATE(bm_softmax_rows, false)->Name("softmax_rows/serial")->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
