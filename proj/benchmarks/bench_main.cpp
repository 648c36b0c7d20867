#include <benchmark/benchmark.h>

#include <numeric>

#include "xvmunet/network.hpp"
#include "xvmunet/ops.hpp"
#include "xvmunet/ssm.hpp"
#include "xvmunet/synthetic.hpp"
#include "xvmunet/train.hpp"
#include "xvmunet/vss.hpp"

using namespace xvmunet;

namespace {

void BM_SelectiveScanForward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 16, n = 8;
  Rng rng(1);
  const Tensor x = Tensor::uniform({len, d}, rng, -1.0, 1.0);
  const Tensor delta = Tensor::uniform({len, d}, rng, 0.01, 0.1);
  const Tensor a_log = Tensor::uniform({d, n}, rng, 0.0, 1.0);
  const Tensor b = Tensor::uniform({len, n}, rng, -1.0, 1.0);
  const Tensor c = Tensor::uniform({len, n}, rng, -1.0, 1.0);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(ssm::selective_scan_core(tape.constant(x), tape.constant(delta), tape.constant(a_log),
                                                      tape.constant(b), tape.constant(c)));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * len * d * n));
}
BENCHMARK(BM_SelectiveScanForward)->Arg(64)->Arg(256)->Arg(1024);

void BM_SelectiveScanBackward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 16, n = 8;
  Rng rng(2);
  const Tensor x = Tensor::uniform({len, d}, rng, -1.0, 1.0);
  const Tensor delta = Tensor::uniform({len, d}, rng, 0.01, 0.1);
  const Tensor a_log = Tensor::uniform({d, n}, rng, 0.0, 1.0);
  const Tensor b = Tensor::uniform({len, n}, rng, -1.0, 1.0);
  const Tensor c = Tensor::uniform({len, n}, rng, -1.0, 1.0);
  for (auto _ : state) {
    Tape tape;
    const Var xs = tape.leaf(x);
    const Var y = ssm::selective_scan_core(xs, tape.leaf(delta), tape.leaf(a_log), tape.leaf(b), tape.leaf(c));
    benchmark::DoNotOptimize(tape.backward(ops::sum(y)));
  }
}
BENCHMARK(BM_SelectiveScanBackward)->Arg(64)->Arg(256)->Arg(1024);

void BM_VSSBlock(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const vss::VSSConfig cfg{8, 4, 2};
  ParamStore p;
  vss::init_vss_block(p, "vss", cfg, 1);
  Rng rng(3);
  const Tensor x = Tensor::uniform({side, side, 8}, rng, -1.0, 1.0);
  for (auto _ : state) {
    Tape tape;
    Binder binder(tape, p, false);
    benchmark::DoNotOptimize(vss::vss_block(Scope(binder).sub("vss"), cfg, tape.constant(x)));
  }
}
BENCHMARK(BM_VSSBlock)->Arg(8)->Arg(16);

void BM_Conv2d(benchmark::State& state) {
  Rng rng(4);
  const Tensor x = Tensor::uniform({8, 32, 32}, rng, -1.0, 1.0);
  const Tensor k = Tensor::uniform({8, 8, 3, 3}, rng, -1.0, 1.0);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(ops::conv2d(tape.constant(x), tape.constant(k), 1, 1));
  }
}
BENCHMARK(BM_Conv2d);

void BM_ToyInference(benchmark::State& state) {
  auto cfg = net::ModelConfig::toy();
  cfg.height = cfg.width = 64;
  const ParamStore w = net::init_model(cfg, 1);
  Rng rng(5);
  const Tensor image = Tensor::uniform({1, 64, 64}, rng, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(net::infer_logits(w, cfg, image));
}
BENCHMARK(BM_ToyInference)->Unit(benchmark::kMillisecond);

void BM_ToyTrainStep(benchmark::State& state) {
  auto cfg = net::ModelConfig::toy();
  cfg.height = cfg.width = 64;
  data::SyntheticSpec spec;
  spec.count = 8;
  data::Dataset ds;
  for (std::size_t i = 0; i < spec.count; ++i) {
    auto g = data::generate_sample(spec, i);
    ds.push_back(data::make_sample(g.id, g.image, g.mask));
  }
  std::vector<std::size_t> batch(8);
  std::iota(batch.begin(), batch.end(), 0);
  ParamStore w = net::init_model(cfg, 1);
  train::AdamW opt(train::AdamWConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(train::train_step(w, opt, cfg, ds, batch, {}));
}
BENCHMARK(BM_ToyTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
