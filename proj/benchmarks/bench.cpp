#include <benchmark/benchmark.h>

#include "nol/analysis.hpp"
#include "nol/attacks.hpp"
#include "nol/data.hpp"
#include "nol/model.hpp"
#include "nol/rng.hpp"
#include "nol/tensor.hpp"

namespace {

nol::Tensor random_tensor(nol::Shape shape, uint64_t seed) {
    nol::Rng rng(seed);
    nol::Tensor t(shape);
    for (double& v : t.data()) v = rng.uniform(0.0, 1.0);
    return t;
}

void bm_conv2d_forward(benchmark::State& state) {
    nol::Tensor x = random_tensor({16, 1, 28, 28}, 1);
    nol::Tensor w = random_tensor({10, 1, 5, 5}, 2);
    nol::Tensor b = random_tensor({10}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(nol::conv2d(x, w, b));
}
BENCHMARK(bm_conv2d_forward);

void bm_conv2d_backward(benchmark::State& state) {
    nol::Tensor x = random_tensor({16, 1, 28, 28}, 1);
    nol::Tensor w = random_tensor({10, 1, 5, 5}, 2);
    nol::Tensor b = random_tensor({10}, 3);
    for (auto _ : state) {
        nol::Tape tape;
        tape.watch(w);
        tape.watch(b);
        nol::Tensor loss = nol::mean(nol::conv2d(x, w, b));
        tape.backward(loss);
        benchmark::DoNotOptimize(w.grad().data());
    }
}
BENCHMARK(bm_conv2d_backward);

void bm_matmul(benchmark::State& state) {
    const int n = int(state.range(0));
    nol::Tensor a = random_tensor({n, n}, 4);
    nol::Tensor b = random_tensor({n, n}, 5);
    for (auto _ : state) benchmark::DoNotOptimize(nol::matmul(a, b));
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(256);

void bm_fgsm(benchmark::State& state) {
    nol::Model model = nol::build_model("convnet2", 10, {1, 28, 28}, 7);
    nol::Dataset ds = nol::synth_dataset(10, 16, 8, 28);
    nol::Batch b = nol::gather(ds, [] {
        std::vector<int> ix(16);
        for (int i = 0; i < 16; ++i) ix[size_t(i)] = i;
        return ix;
    }());
    nol::GradSource src{&model, nullptr};
    for (auto _ : state) benchmark::DoNotOptimize(nol::fgsm(src, b.x, b.y, 0.1));
}
BENCHMARK(bm_fgsm);

void bm_fit_pca(benchmark::State& state) {
    nol::Rng rng(11);
    nol::Matrix f(128, 256);
    for (double& v : f.data) v = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(nol::fit_pca(f));
}
BENCHMARK(bm_fit_pca);

}  // namespace

BENCHMARK_MAIN();
