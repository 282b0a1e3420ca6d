#pragma once

#include <cstdint>

#include "cvqa/curriculum.hpp"
#include "cvqa/synthetic.hpp"

namespace cvqa::testing {

/// Three two-class tasks, small enough for sub-second training runs.
inline data::SyntheticSpec tiny_spec(std::uint64_t seed = 1) {
  data::SyntheticSpec s;
  s.tasks = 3;
  s.classes_per_task = 2;
  s.dim_img = 8;
  s.dim_txt = 8;
  s.cluster_separation = 8.0;
  s.train_per_class = 40;
  s.test_per_class = 20;
  s.seed = seed;
  return s;
}

inline train::RunConfig tiny_config(const data::Manifest& manifest, train::TrainingMode mode,
                                    std::uint64_t seed = 7) {
  train::RunConfig c;
  c.mode = mode;
  c.seed = seed;
  c.hidden_dim = 16;
  c.num_hidden_layers = 2;
  c.per_class_capacity = 5;
  c.replay_batch = 8;
  c.curriculum = train::make_curriculum(manifest);
  for (auto* tc : {&c.curriculum.first_task, &c.curriculum.later_tasks}) {
    tc->learning_rate = 1e-2;
    tc->weight_decay = 1e-5;
    tc->batch_size = 16;
    tc->epochs = 3;
    tc->dropout_rate = 0.1;
  }
  return c;
}

}  // namespace cvqa::testing
