#include "cvqa/zeroshot.hpp"

#include <cstdio>
#include <map>

#include "cvqa/error.hpp"

namespace cvqa::zeroshot {

eval::RunReport evaluate_zero_shot(const data::Dataset& dataset, std::span<const PromptSet> prompts,
                                   const ZeroShotConfig& config) {
  const auto& manifest = dataset.manifest;
  std::map<int, const PromptSet*> by_task;
  for (const auto& set : prompts) {
    if (!by_task.emplace(set.task_id(), &set).second) {
      throw Error(Errc::invalid_argument, "two prompt sets for task " + std::to_string(set.task_id()));
    }
  }
  for (const auto& task : manifest.tasks) {
    const auto it = by_task.find(task.task_id);
    if (it == by_task.end()) {
      throw Error(Errc::invalid_argument, "no prompts for task " + std::to_string(task.task_id));
    }
    if (it->second->dim() != manifest.d_img) {
      throw Error(Errc::dimension_mismatch, "prompt dim " + std::to_string(it->second->dim()) +
                                                " does not match image dim " + std::to_string(manifest.d_img));
    }
  }

  const auto indices = data::split(dataset, config.test_fraction, config.split_seed);
  std::map<int, std::pair<std::size_t, std::size_t>> tally;  // task -> (correct, total)
  for (std::size_t i : indices.test) {
    const auto& record = dataset.records[i];
    const auto prediction = zero_shot_predict(record.image_embedding, *by_task.at(record.task_id), config.temperature);
    auto& [correct, total] = tally[record.task_id];
    if (prediction.label_id == record.label_id) ++correct;
    ++total;
  }

  eval::RunReport report;
  report.engine_version = eval::engine_version();
  report.label = "zero-shot";
  char temperature[32];
  std::snprintf(temperature, sizeof temperature, "%.10g", config.temperature);
  report.config = {{"mode", "zeroshot"}, {"temperature", temperature}};
  report.seed = config.split_seed;
  std::vector<double> row;
  for (const auto& task : manifest.tasks) {
    const auto [correct, total] = tally[task.task_id];
    if (total == 0) throw Error(Errc::empty_input, "task " + std::to_string(task.task_id) + " has no test records");
    report.task_ids.push_back(task.task_id);
    report.task_names.push_back(task.name);
    report.test_counts.push_back(total);
    row.push_back(100.0 * static_cast<double>(correct) / static_cast<double>(total));
  }
  report.matrix = eval::AccuracyMatrix(row.size());
  report.matrix.append_row(std::move(row));
  report.recompute_metrics();
  return report;
}

}  // namespace cvqa::zeroshot
