#include "cvqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cvqa/error.hpp"

#ifndef CVQA_VERSION
#define CVQA_VERSION "0.0.0"
#endif

namespace cvqa::eval {

void AccuracyMatrix::append_row(std::vector<double> row) {
  if (rows_.size() >= tasks_) throw Error(Errc::invalid_argument, "accuracy matrix already full");
  if (row.size() != tasks_) {
    throw Error(Errc::dimension_mismatch, "accuracy row has " + std::to_string(row.size()) +
                                              " entries, expected " + std::to_string(tasks_));
  }
  for (double a : row) {
    if (!(a >= 0.0 && a <= 100.0)) throw Error(Errc::invalid_argument, "accuracy outside [0, 100]");
  }
  rows_.push_back(std::move(row));
}

double average_accuracy(const AccuracyMatrix& matrix) {
  if (!matrix.complete()) throw Error(Errc::invalid_argument, "average accuracy needs a complete matrix");
  const auto& last = matrix.rows().back();
  return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

ForgettingScores forgetting(const AccuracyMatrix& matrix) {
  if (!matrix.complete()) throw Error(Errc::invalid_argument, "forgetting needs a complete matrix");
  const std::size_t t = matrix.tasks();
  if (t < 2) throw Error(Errc::invalid_argument, "forgetting is undefined for a single task");
  ForgettingScores scores;
  for (std::size_t j = 0; j + 1 < t; ++j) {
    double best = matrix.at(j, j);
    for (std::size_t i = j + 1; i + 1 < t; ++i) best = std::max(best, matrix.at(i, j));
    scores.per_task.push_back(best - matrix.at(t - 1, j));
  }
  scores.mean = std::accumulate(scores.per_task.begin(), scores.per_task.end(), 0.0) /
                static_cast<double>(scores.per_task.size());
  return scores;
}

double overall_accuracy(std::span<const double> per_task, std::span<const std::size_t> test_counts) {
  if (per_task.size() != test_counts.size() || per_task.empty()) {
    throw Error(Errc::dimension_mismatch, "accuracies and test counts must align");
  }
  double weighted = 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < per_task.size(); ++j) {
    if (test_counts[j] == 0) throw Error(Errc::invalid_argument, "test counts must be positive");
    weighted += per_task[j] * static_cast<double>(test_counts[j]);
    total += static_cast<double>(test_counts[j]);
  }
  return weighted / total;
}

void RunReport::recompute_metrics() {
  if (matrix.rows_completed() == 0) throw Error(Errc::invalid_argument, "report has no accuracy rows");
  final_accuracy = matrix.rows().back();
  overall = overall_accuracy(final_accuracy, test_counts);
  average = std::accumulate(final_accuracy.begin(), final_accuracy.end(), 0.0) /
            static_cast<double>(final_accuracy.size());
  if (matrix.complete() && matrix.tasks() >= 2) {
    forgetting = eval::forgetting(matrix);
  } else {
    forgetting.reset();
  }
}

std::string engine_version() { return std::string("cvqa ") + CVQA_VERSION; }

}  // namespace cvqa::eval
