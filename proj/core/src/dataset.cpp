#include "cvqa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cvqa/detail/binary_io.hpp"
#include "cvqa/error.hpp"
#include "cvqa/rng.hpp"

namespace cvqa::data {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::string_view kEmb1Magic = "EMB1";
constexpr std::uint32_t kMaxDim = 1u << 20;
constexpr std::string_view kManifestSchema = "cvqa.manifest/1";

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

EmbeddingVector read_vector(detail::LeReader& r, std::size_t dim, std::uint64_t record_id) {
  if (dim == 0) return {};
  std::vector<float> values(dim);
  r.get_f32s(values);
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw Error(Errc::non_finite, "record " + std::to_string(record_id) + " has NaN/Inf payload");
    }
  }
  return EmbeddingVector(std::move(values));
}

template <class T>
T json_get(const Json& j, const char* key) {
  if (!j.contains(key)) throw Error(Errc::corrupt, std::string("manifest missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt, std::string("manifest field '") + key + "': " + e.what());
  }
}

}  // namespace

const TaskDescriptor* Manifest::find_task(int task_id) const {
  for (const auto& task : tasks) {
    if (task.task_id == task_id) return &task;
  }
  return nullptr;
}

void Manifest::validate() const {
  if (tasks.empty()) throw Error(Errc::corrupt, "manifest declares no tasks");
  std::set<int> ids;
  std::set<std::string> names;
  for (const auto& task : tasks) {
    if (task.task_id < 0 || task.task_id > 0xffff) throw Error(Errc::corrupt, "task id out of u16 range");
    if (!ids.insert(task.task_id).second) {
      throw Error(Errc::corrupt, "duplicate task id " + std::to_string(task.task_id));
    }
    if (!names.insert(task.name).second) throw Error(Errc::corrupt, "duplicate task name " + task.name);
    if (task.label_ids.empty()) throw Error(Errc::corrupt, "task " + task.name + " has no labels");
    for (int label : task.label_ids) {
      if (label < 0 || static_cast<std::size_t>(label) >= label_names.size()) {
        throw Error(Errc::label_out_of_range,
                    "task " + task.name + " uses label " + std::to_string(label) +
                        " outside the vocabulary of " + std::to_string(label_names.size()));
      }
    }
  }
}

void write_emb1(std::span<const EmbeddingRecord> records, std::size_t d_img, std::size_t d_txt,
                std::ostream& out) {
  if (d_img > kMaxDim || d_txt > kMaxDim) throw Error(Errc::invalid_argument, "EMB1 dims too large");
  detail::LeWriter w(out);
  w.put_bytes(kEmb1Magic);
  w.put(kEmb1Version);
  w.put(static_cast<std::uint64_t>(records.size()));
  w.put(static_cast<std::uint32_t>(d_img));
  w.put(static_cast<std::uint32_t>(d_txt));
  for (const auto& record : records) {
    if (record.image_embedding.dim() != d_img || record.text_embedding.dim() != d_txt) {
      throw Error(Errc::dimension_mismatch,
                  "record " + std::to_string(record.record_id) + " does not match header dims");
    }
    w.put(record.record_id);
    w.put(record.task_id);
    w.put(record.label_id);
    w.put(std::uint32_t{0});
    w.put_f32s(record.image_embedding.values());
    w.put_f32s(record.text_embedding.values());
  }
}

Emb1Contents read_emb1(std::istream& in) {
  detail::LeReader r(in, "EMB1");
  if (r.get_bytes(kEmb1Magic.size()) != kEmb1Magic) throw Error(Errc::bad_magic, "not an EMB1 file");
  const auto version = r.get<std::uint32_t>();
  if (version != kEmb1Version) throw Error(Errc::bad_version, "EMB1 version " + std::to_string(version));
  const auto count = r.get<std::uint64_t>();
  Emb1Contents contents;
  contents.d_img = r.get<std::uint32_t>();
  contents.d_txt = r.get<std::uint32_t>();
  if (contents.d_img > kMaxDim || contents.d_txt > kMaxDim) throw Error(Errc::corrupt, "EMB1 dims");
  if (count > 0 && contents.d_img == 0 && contents.d_txt == 0) {
    throw Error(Errc::dimension_mismatch, "EMB1 records with no embedding payload");
  }
  contents.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 16)));
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord record;
    record.record_id = r.get<std::uint64_t>();
    record.task_id = r.get<std::uint16_t>();
    record.label_id = r.get<std::uint16_t>();
    if (r.get<std::uint32_t>() != 0) throw Error(Errc::corrupt, "EMB1 record padding is not zero");
    record.image_embedding = read_vector(r, contents.d_img, record.record_id);
    record.text_embedding = read_vector(r, contents.d_txt, record.record_id);
    contents.records.push_back(std::move(record));
  }
  return contents;
}

std::string manifest_to_json(const Manifest& manifest) {
  Json j;
  j["schema"] = kManifestSchema;
  j["dataset"] = manifest.dataset_name;
  j["dims"] = {{"image", manifest.d_img}, {"text", manifest.d_txt}};
  j["labels"] = manifest.label_names;
  Json tasks = Json::array();
  for (const auto& task : manifest.tasks) {
    tasks.push_back({{"id", task.task_id},
                     {"name", task.name},
                     {"labels", task.label_ids},
                     {"prompt_template", task.prompt_template}});
  }
  j["tasks"] = std::move(tasks);
  if (!manifest.split.empty()) {
    Json train = Json::array();
    Json test = Json::array();
    for (const auto& [id, which] : manifest.split) (which == Split::train ? train : test).push_back(id);
    j["split"] = {{"train", std::move(train)}, {"test", std::move(test)}};
  }
  if (!manifest.prompt_table.empty()) j["prompt_table"] = manifest.prompt_table;
  j["provenance"] = Json::object();
  for (const auto& [key, value] : manifest.provenance) j["provenance"][key] = value;
  if (manifest.train_images || manifest.test_images) {
    Json images = Json::object();
    if (manifest.train_images) images["train"] = *manifest.train_images;
    if (manifest.test_images) images["test"] = *manifest.test_images;
    j["image_counts"] = std::move(images);
  }
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (json_get<std::string>(j, "schema") != kManifestSchema) {
    throw Error(Errc::bad_version, "unsupported manifest schema");
  }
  Manifest m;
  m.dataset_name = json_get<std::string>(j, "dataset");
  const auto& dims = j.at("dims");
  m.d_img = json_get<std::size_t>(dims, "image");
  m.d_txt = json_get<std::size_t>(dims, "text");
  m.label_names = json_get<std::vector<std::string>>(j, "labels");
  for (const auto& t : j.at("tasks")) {
    TaskDescriptor task;
    task.task_id = json_get<int>(t, "id");
    task.name = json_get<std::string>(t, "name");
    task.label_ids = json_get<std::vector<int>>(t, "labels");
    task.prompt_template = t.value("prompt_template", "");
    m.tasks.push_back(std::move(task));
  }
  if (j.contains("split")) {
    for (auto id : json_get<std::vector<std::uint64_t>>(j["split"], "train")) m.split[id] = Split::train;
    for (auto id : json_get<std::vector<std::uint64_t>>(j["split"], "test")) {
      if (!m.split.emplace(id, Split::test).second) {
        throw Error(Errc::corrupt, "record " + std::to_string(id) + " assigned to both splits");
      }
    }
  }
  m.prompt_table = j.value("prompt_table", "");
  if (j.contains("provenance")) {
    for (const auto& [key, value] : j["provenance"].items()) m.provenance[key] = value.get<std::string>();
  }
  if (j.contains("image_counts")) {
    const auto& images = j["image_counts"];
    if (images.contains("train")) m.train_images = images["train"].get<std::size_t>();
    if (images.contains("test")) m.test_images = images["test"].get<std::size_t>();
  }
  m.validate();
  return m;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& emb1_path) {
  auto path = emb1_path;
  path.replace_extension(".manifest");
  return path;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& emb1_path) {
  dataset.manifest.validate();
  std::ofstream out(emb1_path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + emb1_path.string() + " for writing");
  write_emb1(dataset.records, dataset.manifest.d_img, dataset.manifest.d_txt, out);
  out.close();
  write_file(manifest_path_for(emb1_path), manifest_to_json(dataset.manifest));
}

void validate_records(const Dataset& dataset) {
  const auto& m = dataset.manifest;
  if (m.d_img == 0 || m.d_txt == 0) throw Error(Errc::dimension_mismatch, "dataset dims must be >= 1");
  std::set<std::uint64_t> ids;
  for (const auto& record : dataset.records) {
    if (record.image_embedding.dim() != m.d_img || record.text_embedding.dim() != m.d_txt) {
      throw Error(Errc::dimension_mismatch,
                  "record " + std::to_string(record.record_id) + " dims differ from manifest");
    }
    const auto* task = m.find_task(record.task_id);
    if (task == nullptr) {
      throw Error(Errc::corrupt, "record " + std::to_string(record.record_id) + " has unknown task " +
                                     std::to_string(record.task_id));
    }
    if (std::find(task->label_ids.begin(), task->label_ids.end(), record.label_id) ==
        task->label_ids.end()) {
      throw Error(Errc::label_out_of_range, "record " + std::to_string(record.record_id) +
                                                " label " + std::to_string(record.label_id) +
                                                " not in task " + task->name);
    }
    if (!ids.insert(record.record_id).second) {
      throw Error(Errc::corrupt, "duplicate record id " + std::to_string(record.record_id));
    }
    if (!m.split.empty() && !m.split.contains(record.record_id)) {
      throw Error(Errc::corrupt, "record " + std::to_string(record.record_id) + " has no split assignment");
    }
  }
}

Dataset load_dataset(const std::filesystem::path& emb1_path) {
  Dataset dataset;
  dataset.manifest = manifest_from_json(read_file(manifest_path_for(emb1_path)));
  std::ifstream in(emb1_path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + emb1_path.string());
  auto contents = read_emb1(in);
  if (contents.d_img != dataset.manifest.d_img || contents.d_txt != dataset.manifest.d_txt) {
    throw Error(Errc::dimension_mismatch, "EMB1 header dims differ from manifest");
  }
  dataset.records = std::move(contents.records);
  validate_records(dataset);
  return dataset;
}

void save_prompt_table(std::span<const PromptSet> prompts, const std::filesystem::path& path) {
  std::vector<EmbeddingRecord> records;
  std::size_t dim = 0;
  for (const auto& set : prompts) {
    for (const auto& entry : set.entries()) {
      if (dim == 0) dim = entry.embedding.dim();
      if (entry.embedding.dim() != dim) throw Error(Errc::dimension_mismatch, "prompt table dims");
      EmbeddingRecord record;
      record.record_id = records.size();
      record.task_id = static_cast<std::uint16_t>(set.task_id());
      record.label_id = static_cast<std::uint16_t>(entry.label_id);
      record.text_embedding = entry.embedding;
      records.push_back(std::move(record));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path.string() + " for writing");
  write_emb1(records, 0, dim, out);
}

std::vector<PromptSet> load_prompt_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open prompt table " + path.string());
  auto contents = read_emb1(in);
  if (contents.d_img != 0) throw Error(Errc::corrupt, "prompt table must have d_img = 0");
  std::map<int, std::vector<LabelPrompt>> by_task;
  for (auto& record : contents.records) {
    by_task[record.task_id].push_back({record.label_id, std::move(record.text_embedding)});
  }
  std::vector<PromptSet> sets;
  for (auto& [task, entries] : by_task) sets.emplace_back(task, std::move(entries));
  return sets;
}

SplitIndices split(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(Errc::invalid_argument, "test_fraction must be in (0, 1)");
  }
  SplitIndices out;
  const auto& records = dataset.records;
  if (!dataset.manifest.split.empty()) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      auto it = dataset.manifest.split.find(records[i].record_id);
      if (it == dataset.manifest.split.end()) {
        throw Error(Errc::corrupt, "record " + std::to_string(records[i].record_id) + " has no split");
      }
      (it->second == Split::train ? out.train : out.test).push_back(i);
    }
    return out;
  }

  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    groups[{records[i].task_id, records[i].label_id}].push_back(i);
  }

  std::size_t eligible = 0;
  for (const auto& [key, members] : groups) {
    if (members.size() < 2) {
      out.warnings.push_back("task " + std::to_string(key.first) + " label " +
                             std::to_string(key.second) + " has " +
                             std::to_string(members.size()) + " record(s); kept in train");
    } else {
      eligible += members.size();
    }
  }
  const auto target = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(eligible)));

  // Largest-remainder apportionment; every class keeps at least one train record.
  struct Quota {
    std::pair<int, int> key;
    std::size_t base;
    std::size_t cap;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [key, members] : groups) {
    if (members.size() < 2) continue;
    const double exact = test_fraction * static_cast<double>(members.size());
    const std::size_t cap = members.size() - 1;
    const auto base = std::min(static_cast<std::size_t>(std::floor(exact)), cap);
    quotas.push_back({key, base, cap, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::stable_sort(quotas.begin(), quotas.end(),
                   [](const Quota& a, const Quota& b) { return a.remainder > b.remainder; });
  // Capped classes pass their unit on; repeat passes until the target or every cap is hit.
  for (bool progress = true; assigned < target && progress;) {
    progress = false;
    for (std::size_t q = 0; assigned < target && q < quotas.size(); ++q) {
      if (quotas[q].base >= quotas[q].cap) continue;
      ++quotas[q].base;
      ++assigned;
      progress = true;
    }
  }

  Rng rng(seed);
  std::map<std::pair<int, int>, std::size_t> test_quota;
  for (const auto& q : quotas) test_quota[q.key] = q.base;
  for (auto& [key, members] : groups) {
    const std::size_t n_test = members.size() < 2 ? 0 : test_quota[key];
    rng.shuffle(std::span(members));
    out.test.insert(out.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

CountReport validate_counts(const Dataset& dataset, const ExpectedCounts& expected) {
  CountReport report;
  std::map<int, std::size_t> train_per_task;
  std::map<int, std::size_t> test_per_task;
  for (const auto& record : dataset.records) {
    auto it = dataset.manifest.split.find(record.record_id);
    if (it == dataset.manifest.split.end()) {
      ++report.unassigned;
    } else if (it->second == Split::train) {
      ++report.train;
      ++train_per_task[record.task_id];
    } else {
      ++report.test;
      ++test_per_task[record.task_id];
    }
  }
  report.total = dataset.records.size();

  auto check = [&](const std::string& what, const std::optional<std::size_t>& want, std::size_t got) {
    if (want && *want != got) report.mismatches.push_back({what, *want, got});
  };
  check("train records", expected.train, report.train);
  check("test records", expected.test, report.test);
  check("total records", expected.total, report.total);
  if (expected.train_images) check("train images", expected.train_images, dataset.manifest.train_images.value_or(0));
  if (expected.test_images) check("test images", expected.test_images, dataset.manifest.test_images.value_or(0));
  for (const auto& [task, want] : expected.train_per_task) {
    check("task " + std::to_string(task) + " train records", want, train_per_task[task]);
  }
  for (const auto& [task, want] : expected.test_per_task) {
    check("task " + std::to_string(task) + " test records", want, test_per_task[task]);
  }
  return report;
}

ExpectedCounts floodnet_expected_counts() {
  ExpectedCounts e;
  e.name = "floodnet-vqa";
  e.train = 3620;
  e.test = 891;
  e.total = 4511;
  e.train_images = 1158;
  e.test_images = 290;
  return e;
}

ExpectedCounts expected_counts_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt, std::string("expected-counts file is not valid JSON: ") + e.what());
  }
  ExpectedCounts e;
  e.name = j.value("name", "");
  auto opt = [&](const char* key) -> std::optional<std::size_t> {
    if (!j.contains(key)) return std::nullopt;
    return j[key].get<std::size_t>();
  };
  e.train = opt("train");
  e.test = opt("test");
  e.total = opt("total");
  e.train_images = opt("train_images");
  e.test_images = opt("test_images");
  for (const char* key : {"train_per_task", "test_per_task"}) {
    if (!j.contains(key)) continue;
    auto& target = std::string_view(key) == "train_per_task" ? e.train_per_task : e.test_per_task;
    for (const auto& [task, count] : j[key].items()) target[std::stoi(task)] = count.get<std::size_t>();
  }
  return e;
}

Manifest floodnet_manifest_template() {
  Manifest m;
  m.dataset_name = "floodnet-vqa";
  m.label_names = {"yes", "no", "flooded", "non flooded"};
  m.tasks = {
      {0, "Yes/No", {0, 1}, "{label}"},
      {1, "Image Condition Recognition", {2, 3}, "a photo of a {label} area"},
      {2, "Road Condition Recognition", {2, 3}, "a photo of a {label} area"},
  };
  m.d_img = 768;
  m.d_txt = 768;
  m.provenance["encoder"] = "CLIP ViT-L/14";
  return m;
}

}  // namespace cvqa::data
