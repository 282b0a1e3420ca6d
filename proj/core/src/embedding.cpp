#include "cvqa/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>

#include "cvqa/error.hpp"

namespace cvqa {

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return sum;
}

double norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

std::string dims_message(std::size_t a, std::size_t b) {
  return "dims " + std::to_string(a) + " and " + std::to_string(b);
}

}  // namespace

EmbeddingVector::EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {
  if (values_.empty()) throw Error(Errc::invalid_argument, "embedding must have dim >= 1");
  for (float v : values_) {
    if (!std::isfinite(v)) throw Error(Errc::non_finite, "embedding component is NaN or Inf");
  }
}

std::string_view to_string(FusionMode mode) noexcept {
  switch (mode) {
    case FusionMode::add: return "add";
    case FusionMode::mul: return "mul";
    case FusionMode::cat: return "cat";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view name) {
  if (name == "add") return FusionMode::add;
  if (name == "mul") return FusionMode::mul;
  if (name == "cat") return FusionMode::cat;
  throw Error(Errc::invalid_argument, "unknown fusion mode '" + std::string(name) + "'");
}

std::size_t fused_dim(std::size_t img_dim, std::size_t txt_dim, FusionMode mode) {
  if (mode == FusionMode::cat) return img_dim + txt_dim;
  if (img_dim != txt_dim) {
    throw Error(Errc::dimension_mismatch,
                std::string(to_string(mode)) + " fusion needs equal " + dims_message(img_dim, txt_dim));
  }
  return img_dim;
}

void fuse_into(std::span<const float> img, std::span<const float> txt, FusionMode mode,
               std::span<float> out) {
  const std::size_t width = fused_dim(img.size(), txt.size(), mode);
  if (out.size() != width) throw Error(Errc::dimension_mismatch, "fusion output buffer width");
  switch (mode) {
    case FusionMode::add:
      std::transform(img.begin(), img.end(), txt.begin(), out.begin(), std::plus<>{});
      break;
    case FusionMode::mul:
      std::transform(img.begin(), img.end(), txt.begin(), out.begin(), std::multiplies<>{});
      break;
    case FusionMode::cat:
      std::copy(img.begin(), img.end(), out.begin());
      std::copy(txt.begin(), txt.end(), out.begin() + static_cast<std::ptrdiff_t>(img.size()));
      break;
  }
}

EmbeddingVector fuse(const EmbeddingVector& img, const EmbeddingVector& txt, FusionMode mode) {
  std::vector<float> out(fused_dim(img.dim(), txt.dim(), mode));
  fuse_into(img.values(), txt.values(), mode, out);
  return EmbeddingVector(std::move(out));
}

NormalizedVector l2_normalize(const EmbeddingVector& v) {
  const double n = norm(v.values());
  if (n == 0.0) return {v, true};
  std::vector<float> out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(v[i]) / n);
  }
  return {EmbeddingVector(std::move(out)), false};
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw Error(Errc::dimension_mismatch, "cosine similarity over " + dims_message(a.dim(), b.dim()));
  }
  const double na = norm(a.values());
  const double nb = norm(b.values());
  if (na == 0.0 && nb == 0.0) {
    throw Error(Errc::undefined_similarity, "both vectors are zero");
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a.values(), b.values()) / (na * nb), -1.0, 1.0);
}

PromptSet::PromptSet(int task_id, std::vector<LabelPrompt> entries)
    : task_id_(task_id), entries_(std::move(entries)) {
  std::set<int> seen;
  for (const auto& entry : entries_) {
    if (entry.embedding.empty()) throw Error(Errc::invalid_argument, "prompt embedding is empty");
    if (entry.embedding.dim() != entries_.front().embedding.dim()) {
      throw Error(Errc::dimension_mismatch,
                  "prompt " + dims_message(entries_.front().embedding.dim(), entry.embedding.dim()));
    }
    if (!seen.insert(entry.label_id).second) {
      throw Error(Errc::invalid_argument,
                  "duplicate prompt label " + std::to_string(entry.label_id));
    }
  }
}

ZeroShotPrediction zero_shot_predict(const EmbeddingVector& img, const PromptSet& prompts,
                                     double temperature) {
  if (prompts.empty()) throw Error(Errc::empty_input, "zero-shot prompt set is empty");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(Errc::invalid_argument, "temperature must be positive");
  }
  if (img.dim() != prompts.dim()) {
    throw Error(Errc::dimension_mismatch,
                "image vs prompt " + dims_message(img.dim(), prompts.dim()));
  }

  const auto entries = prompts.entries();
  std::vector<double> logits(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    logits[k] = temperature * cosine_similarity(img, entries[k].embedding);
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  std::vector<double> posterior(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    posterior[k] = std::exp(logits[k] - peak);
    total += posterior[k];
  }
  for (double& p : posterior) p /= total;

  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return {entries[best].label_id, std::move(posterior)};
}

}  // namespace cvqa
