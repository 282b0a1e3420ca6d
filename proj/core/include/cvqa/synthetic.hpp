#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cvqa/dataset.hpp"

namespace cvqa::data {

/// Desk-scale stand-in for an embedding export: Gaussian class clusters in
/// image space, a near-constant text embedding per task, disjoint labels.
struct SyntheticSpec {
  std::size_t tasks = 3;
  std::size_t classes_per_task = 2;
  std::size_t dim_img = 32;
  std::size_t dim_txt = 32;
  double cluster_separation = 8.0;  // minimum distance between class means, in sigma
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 100;
  std::uint64_t seed = 0;
  /// Within-task non-stationarity: each class mean slides along its own unit
  /// direction by `drift` sigma over the training stream. Test records are
  /// spread uniformly over the same range.
  double drift = 0.0;
  double text_noise = 0.05;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  std::vector<PromptSet> prompts;             // per task, prompts = class means
  std::vector<std::vector<float>> class_means;  // index == global label id
};

/// Fully seeded. Training records of a task are interleaved in arrival order
/// and numbered before all test records; the split is recorded in the manifest.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

ExpectedCounts expected_counts(const SyntheticSpec& spec);

}  // namespace cvqa::data
