#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cvqa::eval {

/// R[i][j]: accuracy (percent) on the j-th curriculum task right after the
/// i-th task finished training. Rows are appended as tasks complete.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks) : tasks_(tasks) {}

  void append_row(std::vector<double> row);

  [[nodiscard]] std::size_t tasks() const noexcept { return tasks_; }
  [[nodiscard]] std::size_t rows_completed() const noexcept { return rows_.size(); }
  [[nodiscard]] bool complete() const noexcept { return tasks_ > 0 && rows_.size() == tasks_; }
  [[nodiscard]] double at(std::size_t i, std::size_t j) const { return rows_.at(i).at(j); }
  [[nodiscard]] const std::vector<std::vector<double>>& rows() const noexcept { return rows_; }

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::size_t tasks_ = 0;
  std::vector<std::vector<double>> rows_;
};

/// Mean of the last row; the matrix must be complete.
double average_accuracy(const AccuracyMatrix& matrix);

struct ForgettingScores {
  std::vector<double> per_task;  // signed; negative means backward transfer
  double mean = 0.0;

  friend bool operator==(const ForgettingScores&, const ForgettingScores&) = default;
};

/// f_j = max_{j <= i < T-1} R[i][j] - R[T-1][j] for j < T-1. Needs a complete
/// matrix with T >= 2.
ForgettingScores forgetting(const AccuracyMatrix& matrix);

/// Test-count-weighted mean of per-task accuracies.
double overall_accuracy(std::span<const double> per_task, std::span<const std::size_t> test_counts);

struct HyperparameterRecord {
  int task_id = 0;
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  std::size_t epochs = 0;
  std::size_t steps = 0;

  friend bool operator==(const HyperparameterRecord&, const HyperparameterRecord&) = default;
};

inline constexpr std::string_view kReportSchema = "cvqa.report/1";

struct RunReport {
  std::string schema_version{kReportSchema};
  std::string engine_version;
  std::string label;
  std::map<std::string, std::string> config;
  std::vector<int> task_ids;  // curriculum order; matrix columns follow it
  std::vector<std::string> task_names;
  std::vector<std::size_t> test_counts;
  AccuracyMatrix matrix;
  std::vector<double> final_accuracy;
  double overall = 0.0;
  double average = 0.0;
  std::optional<ForgettingScores> forgetting;
  std::vector<HyperparameterRecord> hyper_trace;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;

  /// Derives final/overall/average/forgetting from the matrix and test counts.
  void recompute_metrics();

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

std::string engine_version();

enum class ReportFormat { json, csv, svg, table };

std::string render_json(const RunReport& report);
RunReport parse_json(std::string_view text);

std::string render_csv(const AccuracyMatrix& matrix, std::span<const int> task_ids);
AccuracyMatrix parse_csv(std::string_view text);

/// One polyline per task: its accuracy after each curriculum position from
/// the one where it was trained onwards.
std::string render_svg(const RunReport& report);

/// Plain-text table: method, overall, then one column per task.
std::string render_table(std::span<const RunReport> reports);

void emit_report(const RunReport& report, ReportFormat format, const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace cvqa::eval
