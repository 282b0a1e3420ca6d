#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvqa/embedding.hpp"

namespace cvqa::data {

struct EmbeddingRecord {
  std::uint64_t record_id = 0;
  std::uint16_t task_id = 0;
  std::uint16_t label_id = 0;
  EmbeddingVector image_embedding;
  EmbeddingVector text_embedding;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

enum class Split : std::uint8_t { train, test };

struct TaskDescriptor {
  int task_id = 0;
  std::string name;
  std::vector<int> label_ids;   // global ids
  std::string prompt_template;  // zero-shot template, "{label}" is substituted

  friend bool operator==(const TaskDescriptor&, const TaskDescriptor&) = default;
};

struct Manifest {
  std::string dataset_name;
  std::vector<std::string> label_names;  // global vocabulary, index == label id
  std::vector<TaskDescriptor> tasks;
  std::size_t d_img = 0;
  std::size_t d_txt = 0;
  std::map<std::uint64_t, Split> split;  // pre-assigned split; empty when absent
  std::string prompt_table;              // EMB1 path relative to the manifest
  std::map<std::string, std::string> provenance;
  std::optional<std::size_t> train_images;
  std::optional<std::size_t> test_images;

  [[nodiscard]] const TaskDescriptor* find_task(int task_id) const;
  [[nodiscard]] std::size_t label_count() const { return label_names.size(); }
  /// Dense vocabulary, task labels inside it, unique task ids and names.
  void validate() const;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct Dataset {
  Manifest manifest;
  std::vector<EmbeddingRecord> records;
};

// EMB1 (little-endian): "EMB1", u32 version = 1, u64 n_records, u32 d_img,
// u32 d_txt, then per record: u64 record_id, u16 task_id, u16 label_id,
// u32 padding = 0, d_img f32, d_txt f32. A zero width marks an absent
// modality (prompt tables carry only the text side).
inline constexpr std::uint32_t kEmb1Version = 1;

struct Emb1Contents {
  std::size_t d_img = 0;
  std::size_t d_txt = 0;
  std::vector<EmbeddingRecord> records;
};

void write_emb1(std::span<const EmbeddingRecord> records, std::size_t d_img, std::size_t d_txt,
                std::ostream& out);
Emb1Contents read_emb1(std::istream& in);

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(std::string_view text);

/// Sidecar manifest path: same basename with a ".manifest" extension.
std::filesystem::path manifest_path_for(const std::filesystem::path& emb1_path);

void save_dataset(const Dataset& dataset, const std::filesystem::path& emb1_path);
/// Reads EMB1 + manifest and validates dims, label membership and split coverage.
Dataset load_dataset(const std::filesystem::path& emb1_path);
void validate_records(const Dataset& dataset);

/// Prompt table: EMB1 with d_img = 0; the text side holds one prompt
/// embedding per (task, candidate label).
void save_prompt_table(std::span<const PromptSet> prompts, const std::filesystem::path& path);
std::vector<PromptSet> load_prompt_table(const std::filesystem::path& path);

struct SplitIndices {
  std::vector<std::size_t> train;  // indices into Dataset::records, ascending
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;
};

/// Honors the manifest's pre-assigned split when present; otherwise a
/// class-stratified split per (task, label) with exactly
/// round(test_fraction * eligible) test records apportioned by largest
/// remainder. Classes with fewer than 2 records go to train with a warning.
SplitIndices split(const Dataset& dataset, double test_fraction, std::uint64_t seed);

struct ExpectedCounts {
  std::string name;
  std::optional<std::size_t> train;
  std::optional<std::size_t> test;
  std::optional<std::size_t> total;
  std::optional<std::size_t> train_images;
  std::optional<std::size_t> test_images;
  std::map<int, std::size_t> train_per_task;
  std::map<int, std::size_t> test_per_task;
};

struct CountMismatch {
  std::string quantity;
  std::size_t expected = 0;
  std::size_t actual = 0;
};

struct CountReport {
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t unassigned = 0;
  std::size_t total = 0;
  std::vector<CountMismatch> mismatches;

  [[nodiscard]] bool ok() const { return mismatches.empty(); }
};

CountReport validate_counts(const Dataset& dataset, const ExpectedCounts& expected);

/// FloodNet VQA split sizes (Yes/No + condition questions, counting excluded
/// at export): 3620 train questions over 1158 images, 891 test over 290.
ExpectedCounts floodnet_expected_counts();
ExpectedCounts expected_counts_from_json(std::string_view text);

/// Default FloodNet manifest: Yes/No, Image Condition Recognition and Road
/// Condition Recognition over a shared four-word vocabulary. Label names are
/// placeholders meant to be overridden by the exporter.
Manifest floodnet_manifest_template();

}  // namespace cvqa::data
