#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace cvqa {

/// Dense float embedding. A constructed vector is non-empty and finite; the
/// default-constructed value is the empty placeholder used for absent
/// modalities (e.g. the image slot of a prompt table).
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<float> values);
  EmbeddingVector(std::initializer_list<float> values)
      : EmbeddingVector(std::vector<float>(values)) {}

  [[nodiscard]] std::size_t dim() const noexcept { return values_.size(); }
  [[nodiscard]] bool empty() const noexcept { return values_.empty(); }
  [[nodiscard]] std::span<const float> values() const noexcept { return values_; }
  [[nodiscard]] float operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<float> values_;
};

enum class FusionMode { add, mul, cat };

std::string_view to_string(FusionMode mode) noexcept;
FusionMode parse_fusion_mode(std::string_view name);

/// Output width of fuse() for the given input widths.
std::size_t fused_dim(std::size_t img_dim, std::size_t txt_dim, FusionMode mode);

/// Add and Mul are elementwise and need equal widths; Cat appends txt after img.
EmbeddingVector fuse(const EmbeddingVector& img, const EmbeddingVector& txt, FusionMode mode);

/// Span form used when fusing whole datasets into a feature matrix.
void fuse_into(std::span<const float> img, std::span<const float> txt, FusionMode mode,
               std::span<float> out);

struct NormalizedVector {
  EmbeddingVector vector;
  bool was_zero = false;  // input had zero norm and was returned unchanged
};

NormalizedVector l2_normalize(const EmbeddingVector& v);

/// Accumulates in double. Throws undefined_similarity when both inputs are
/// zero; a single zero input yields 0.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

struct LabelPrompt {
  int label_id = 0;
  EmbeddingVector embedding;
};

/// Candidate-answer prompts for one question category.
class PromptSet {
 public:
  PromptSet() = default;
  PromptSet(int task_id, std::vector<LabelPrompt> entries);

  [[nodiscard]] int task_id() const noexcept { return task_id_; }
  [[nodiscard]] std::span<const LabelPrompt> entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] std::size_t dim() const noexcept {
    return entries_.empty() ? 0 : entries_.front().embedding.dim();
  }

 private:
  int task_id_ = 0;
  std::vector<LabelPrompt> entries_;
};

/// Logit scale applied to cosine similarities before the softmax.
inline constexpr double kDefaultZeroShotTemperature = 100.0;

struct ZeroShotPrediction {
  int label_id = 0;
  std::vector<double> posterior;  // aligned with PromptSet::entries()
};

/// Scores the image against every prompt by cosine similarity (both sides
/// L2-normalized), takes softmax(temperature * similarity) and returns the
/// argmax label. Ties go to the earliest prompt.
ZeroShotPrediction zero_shot_predict(const EmbeddingVector& img, const PromptSet& prompts,
                                     double temperature = kDefaultZeroShotTemperature);

}  // namespace cvqa
