#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvqa/dataset.hpp"
#include "cvqa/embedding.hpp"
#include "cvqa/metrics.hpp"
#include "cvqa/nn.hpp"
#include "cvqa/replay.hpp"

namespace cvqa::train {

enum class TrainingMode { joint_supervised, taskwise, continual, continual_no_replay };

std::string_view to_string(TrainingMode mode) noexcept;
TrainingMode parse_training_mode(std::string_view name);

struct TaskSpec {
  int task_id = 0;
  std::string name;
  std::vector<int> label_ids;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// Learning rate 1e-4 / weight decay 1e-5, batch 256, dropout 0.2, 25 epochs.
nn::TrainConfig default_first_task_config();
/// Same as the first-task config but learning rate 5e-6 / weight decay 2e-5.
nn::TrainConfig default_later_task_config();

struct Curriculum {
  std::vector<TaskSpec> tasks;
  nn::TrainConfig first_task = default_first_task_config();
  nn::TrainConfig later_tasks = default_later_task_config();

  [[nodiscard]] const nn::TrainConfig& config_for(std::size_t position) const {
    return position == 0 ? first_task : later_tasks;
  }
  [[nodiscard]] std::vector<int> order() const;
  /// Non-empty, no task repeated, every task has labels.
  void validate() const;

  friend bool operator==(const Curriculum&, const Curriculum&) = default;
};

/// Tasks in the given order (all manifest tasks in manifest order when empty).
Curriculum make_curriculum(const data::Manifest& manifest, std::span<const int> order = {});

struct RunConfig {
  FusionMode fusion = FusionMode::mul;
  replay::BufferPolicy policy = replay::BufferPolicy::reservoir;
  replay::ReservoirScope reservoir_scope = replay::ReservoirScope::per_class;
  std::size_t per_class_capacity = 25;
  std::size_t replay_batch = 64;
  std::uint64_t seed = 0;
  Curriculum curriculum;
  TrainingMode mode = TrainingMode::continual;
  std::size_t hidden_dim = 1024;
  std::size_t num_hidden_layers = 3;
  double test_fraction = 0.2;  // used only when the manifest has no split

  void validate() const;
  /// Flat key/value echo carried into reports.
  [[nodiscard]] std::map<std::string, std::string> echo() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(std::string_view text);

/// Fused features and split of a dataset; read-only and shareable across runs.
struct PreparedData {
  FusionMode fusion = FusionMode::mul;
  std::size_t feature_dim = 0;
  std::size_t label_count = 0;
  nn::Matrix<float> features;  // one row per record
  std::vector<int> labels;
  std::vector<int> tasks;
  std::vector<std::uint64_t> record_ids;
  std::vector<std::size_t> train;  // ascending record indices == arrival order
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;

  [[nodiscard]] std::vector<std::size_t> train_of(int task_id) const;
  [[nodiscard]] std::vector<std::size_t> test_of(int task_id) const;
};

PreparedData prepare(const data::Dataset& dataset, FusionMode fusion, double test_fraction,
                     std::uint64_t split_seed);

/// Percentage of correct argmax predictions over the test records of one
/// task (or all tasks). Throws empty_input when the selection is empty.
double evaluate(const nn::MlpModel& model, const PreparedData& data,
                std::optional<int> task_filter = std::nullopt);
double evaluate_indices(const nn::MlpModel& model, const PreparedData& data,
                        std::span<const std::size_t> indices);

struct TrainHooks {
  /// Every current-task training record as it enters a batch.
  std::function<void(std::size_t position, int task_id, std::uint64_t record_id)> on_train_record;
  std::function<void(std::size_t position, std::size_t epoch, double mean_loss)> on_epoch;
};

struct StreamState {
  std::size_t next_position = 0;
  nn::MlpModel model;
  replay::EpisodicMemory memory{replay::BufferPolicy::reservoir, 0, 0};
  eval::AccuracyMatrix matrix;
  std::vector<eval::HyperparameterRecord> hyper_trace;

  friend bool operator==(const StreamState&, const StreamState&) = default;
};

struct RunResult {
  nn::MlpModel model;
  eval::RunReport report;
};

struct TaskwiseResult {
  std::vector<nn::MlpModel> models;  // curriculum order
  eval::RunReport report;
};

struct ContinualResult {
  StreamState state;
  eval::RunReport report;
};

struct ContinualOptions {
  std::optional<StreamState> resume;     // continue from a task boundary
  std::optional<std::size_t> stop_after;  // stop once this many tasks are complete
};

/// One model on every curriculum task's training records jointly, trained
/// with the first-task hyperparameters.
RunResult train_supervised(const PreparedData& data, const RunConfig& config,
                           const TrainHooks& hooks = {});

/// An independent model per task, each trained and scored on its own task.
TaskwiseResult train_taskwise(const PreparedData& data, const RunConfig& config,
                              const TrainHooks& hooks = {});

/// Tasks strictly in curriculum order with a fresh optimizer per task. In
/// Continual mode every step after the first task appends replay_batch memory
/// samples; each current-task record is offered to the memory once, in
/// arrival order, during the task's first epoch. The model is scored on every
/// task after each task, filling one accuracy-matrix row.
ContinualResult train_continual(const PreparedData& data, const RunConfig& config,
                                const TrainHooks& hooks = {}, ContinualOptions options = {});

/// Dispatches on config.mode and returns the report of the run.
eval::RunReport run(const PreparedData& data, const RunConfig& config, const TrainHooks& hooks = {});

}  // namespace cvqa::train
