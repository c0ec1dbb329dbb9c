// Microbenchmarks for the inference-critical paths: convolution, the MSFA
// tail, one DyHead block, full model forward, and NMS.

#include <benchmark/benchmark.h>

#include "irnet/dyhead.hpp"
#include "irnet/model.hpp"
#include "irnet/msfa.hpp"
#include "irnet/ops.hpp"
#include "irnet/postprocess.hpp"
#include "irnet/rng.hpp"

using namespace irnet;

static void BM_Conv2dK3(benchmark::State& state) {
    const std::int64_t c = state.range(0);
    Rng rng(1);
    Tensor x = Tensor::rand_uniform({1, c, 64, 64}, rng, -1.0, 1.0, Dtype::F32);
    ConvParams p;
    p.weight = Tensor::rand_uniform({c, c, 3, 3}, rng, -0.2, 0.2, Dtype::F32);
    p.bias = Tensor::rand_uniform({c}, rng, -0.1, 0.1, Dtype::F32);
    p.padding = 1;
    for (auto _ : state) {
        Tensor y = conv2d_forward(x, p);
        benchmark::DoNotOptimize(y.at(0));
    }
}
BENCHMARK(BM_Conv2dK3)->Arg(8)->Arg(16)->Arg(32);

static void BM_Conv2dDilated5(benchmark::State& state) {
    Rng rng(2);
    Tensor x = Tensor::rand_uniform({1, 32, 16, 16}, rng, -1.0, 1.0, Dtype::F32);
    ConvParams p;
    p.weight = Tensor::rand_uniform({32, 32, 3, 3}, rng, -0.2, 0.2, Dtype::F32);
    p.bias = Tensor::rand_uniform({32}, rng, -0.1, 0.1, Dtype::F32);
    p.dilation = 5;
    p.padding = 5;
    for (auto _ : state) {
        Tensor y = conv2d_forward(x, p);
        benchmark::DoNotOptimize(y.at(0));
    }
}
BENCHMARK(BM_Conv2dDilated5);

static void BM_MsfaBlock(benchmark::State& state) {
    Rng rng(3);
    MsfaBlock block(64, 32, 64, {1, 3, 5}, Dtype::F32, rng);
    Tensor x = Tensor::rand_uniform({1, 64, 8, 8}, rng, -1.0, 1.0, Dtype::F32);
    for (auto _ : state) {
        Tensor y = block.forward(x);
        benchmark::DoNotOptimize(y.at(0));
    }
}
BENCHMARK(BM_MsfaBlock);

static void BM_DyHeadBlock(benchmark::State& state) {
    Rng rng(4);
    const DyHeadBlock block(16, Dtype::F32, rng);
    std::vector<Tensor> levels;
    levels.push_back(Tensor::rand_uniform({1, 16, 32, 32}, rng, -1.0, 1.0, Dtype::F32));
    levels.push_back(Tensor::rand_uniform({1, 16, 16, 16}, rng, -1.0, 1.0, Dtype::F32));
    for (auto _ : state) {
        std::vector<Tensor> out = block.forward_levels(levels);
        benchmark::DoNotOptimize(out[0].at(0));
    }
}
BENCHMARK(BM_DyHeadBlock);

static void BM_ModelForward(benchmark::State& state) {
    const std::int64_t hw = state.range(0);
    ModelConfig cfg; // desk defaults: width 0.25, two scales, two DyHead blocks
    cfg.seed = 5;
    const Model model = build_model(cfg);
    Rng rng(6);
    Tensor x = Tensor::rand_uniform({1, 1, hw, hw}, rng, 0.0, 1.0, Dtype::F32);
    for (auto _ : state) {
        std::vector<Tensor> preds = model.forward(x);
        benchmark::DoNotOptimize(preds[0].at(0));
    }
}
BENCHMARK(BM_ModelForward)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_Nms(benchmark::State& state) {
    Rng rng(7);
    std::vector<Detection> dets;
    for (int i = 0; i < 1000; ++i) {
        Detection d;
        const double x1 = 500.0 * rng.uniform(), y1 = 500.0 * rng.uniform();
        d.box = {x1, y1, x1 + 2.0 + 30.0 * rng.uniform(), y1 + 2.0 + 30.0 * rng.uniform()};
        d.score = rng.uniform();
        d.cls = 0;
        dets.push_back(d);
    }
    for (auto _ : state) {
        std::vector<Detection> kept = nms(dets, 0.45);
        benchmark::DoNotOptimize(kept.size());
    }
}
BENCHMARK(BM_Nms);

BENCHMARK_MAIN();
