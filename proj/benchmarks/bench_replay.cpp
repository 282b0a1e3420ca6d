#include <benchmark/benchmark.h>

#include "cvqa/replay.hpp"
#include "cvqa/rng.hpp"

using namespace cvqa;

namespace {

std::vector<replay::MemorySlot> stream(std::size_t n, std::size_t dim, int classes) {
  Rng rng(11);
  std::vector<replay::MemorySlot> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> f(dim);
    for (float& v : f) v = static_cast<float>(rng.normal());
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    out.push_back({EmbeddingVector(std::move(f)), label, label / 2, 1.0});
  }
  return out;
}

void BM_Insert(benchmark::State& state) {
  const auto policy = static_cast<replay::BufferPolicy>(state.range(0));
  const auto items = stream(4096, 768, 6);
  for (auto _ : state) {
    replay::EpisodicMemory memory(policy, 25, 1);
    for (const auto& slot : items) memory.insert(slot);
    benchmark::DoNotOptimize(memory.size());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(items.size()));
  state.SetLabel(std::string(replay::to_string(policy)));
}
BENCHMARK(BM_Insert)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_Sample(benchmark::State& state) {
  replay::EpisodicMemory memory(replay::BufferPolicy::reservoir, 25, 1);
  for (const auto& slot : stream(2000, 768, 6)) memory.insert(slot);
  Rng rng(5);
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto drawn = memory.sample(k, rng);
    benchmark::DoNotOptimize(drawn.data());
  }
}
BENCHMARK(BM_Sample)->Arg(64)->Arg(150);

}  // namespace
