#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cvqa/curriculum.hpp"

namespace cvqa::train {

struct SweepOptions {
  std::vector<replay::BufferPolicy> policies{replay::BufferPolicy::reservoir, replay::BufferPolicy::ring,
                                             replay::BufferPolicy::mean_of_features};
  /// Empty means every permutation of the base curriculum, lexicographic by task id.
  std::vector<std::vector<int>> orders;
  std::uint64_t master_seed = 0;
  std::size_t workers = 1;  // > 1 runs share-nothing worker threads
  bool allow_any_task_count = false;
};

struct SweepEntry {
  std::size_t run_index = 0;
  std::vector<int> order;
  replay::BufferPolicy policy = replay::BufferPolicy::reservoir;
  std::uint64_t seed = 0;
  eval::RunReport report;
};

struct PolicyRanking {
  replay::BufferPolicy policy = replay::BufferPolicy::reservoir;
  double mean_average_accuracy = 0.0;
  std::size_t rank = 0;  // 1-based
};

struct SweepResult {
  std::vector<SweepEntry> entries;  // run_index order
  std::vector<PolicyRanking> ranking;  // best first
};

/// All permutations of `ids` in lexicographic order.
std::vector<std::vector<int>> all_orders(std::vector<int> ids);

/// Runs every (order, policy) pair in continual mode. Run k uses seed
/// derive_seed(master_seed, k) with k = order_index * policies + policy_index,
/// so results do not depend on the worker count.
SweepResult permutation_sweep(const data::Manifest& manifest, const PreparedData& data, const RunConfig& base,
                              const SweepOptions& options);

/// Deterministic text table: one line per run sorted by final average
/// accuracy within each order, then the per-policy ranking. Timing is left out.
std::string render_sweep_table(const SweepResult& result);

}  // namespace cvqa::train
