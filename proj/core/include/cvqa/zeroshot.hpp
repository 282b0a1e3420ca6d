#pragma once

#include <cstdint>
#include <span>

#include "cvqa/dataset.hpp"
#include "cvqa/embedding.hpp"
#include "cvqa/metrics.hpp"

namespace cvqa::zeroshot {

struct ZeroShotConfig {
  double temperature = kDefaultZeroShotTemperature;
  double test_fraction = 0.2;  // used only when the manifest has no split
  std::uint64_t split_seed = 0;
};

/// Scores each test record's image embedding against its task's prompt set.
/// The report has a single accuracy row over the manifest's tasks. Every
/// task needs a prompt set whose dim matches d_img.
eval::RunReport evaluate_zero_shot(const data::Dataset& dataset, std::span<const PromptSet> prompts,
                                   const ZeroShotConfig& config = {});

}  // namespace cvqa::zeroshot
