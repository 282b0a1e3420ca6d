#include <benchmark/benchmark.h>

#include "cvqa/nn.hpp"
#include "cvqa/rng.hpp"

using namespace cvqa;

namespace {

nn::Matrix<float> random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  nn::Matrix<float> m(rows, cols);
  for (float& v : m.data) v = static_cast<float>(rng.normal());
  return m;
}

// Full-size topology (768 -> 3 x 1024 -> labels) at varying hidden widths.
void BM_Forward(benchmark::State& state) {
  const auto hidden = static_cast<std::size_t>(state.range(0));
  const auto model = nn::init_model<float>(768, hidden, 3, 4, 1);
  const auto x = random_batch(256, 768, 2);
  Rng rng(3);
  for (auto _ : state) {
    auto out = nn::forward(model, x, 0.0, false, rng);
    benchmark::DoNotOptimize(out.logits.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_Forward)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto hidden = static_cast<std::size_t>(state.range(0));
  auto model = nn::init_model<float>(768, hidden, 3, 4, 1);
  const auto x = random_batch(256, 768, 2);
  std::vector<int> labels(256);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
  auto adam = nn::AdamState<float>::for_model(model);
  Rng rng(3);
  for (auto _ : state) {
    auto fwd = nn::forward(model, x, 0.2, true, rng);
    auto loss = nn::softmax_cross_entropy(fwd.logits, labels);
    auto grads = nn::backward(model, fwd.cache, loss.dlogits);
    nn::adam_step(model, adam, grads, 1e-4, 1e-5);
    benchmark::DoNotOptimize(loss.loss);
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_TrainStep)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
