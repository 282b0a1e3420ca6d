#include "cvqa/curriculum.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "cvqa/error.hpp"

namespace cvqa::train {

namespace {

using Json = nlohmann::ordered_json;

// Child-seed streams derived from the run seed.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kPhaseStream = 1000;
constexpr std::uint64_t kReplayStream = 2000;
constexpr std::uint64_t kMemoryStream = 3000;

constexpr std::size_t kEvalChunk = 2048;

std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.10g", value);
  return buffer;
}

std::string join(std::span<const int> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

nn::MlpModel fresh_model(const PreparedData& data, const RunConfig& config) {
  return nn::init_model<float>(data.feature_dim, config.hidden_dim, config.num_hidden_layers,
                               data.label_count, derive_seed(config.seed, kInitStream));
}

replay::MemorySlot slot_for(const PreparedData& data, std::size_t index) {
  const auto row = data.features.row(index);
  return {EmbeddingVector(std::vector<float>(row.begin(), row.end())), data.labels[index],
          data.tasks[index], 1.0};
}

struct PhaseSpec {
  std::size_t position = 0;
  int task_id = 0;
  const nn::TrainConfig* train = nullptr;
  replay::EpisodicMemory* ingest = nullptr;  // receives current-task records in epoch 0
  const replay::EpisodicMemory* replay_from = nullptr;
  std::size_t replay_batch = 0;
  std::uint64_t run_seed = 0;
};

/// Trains `model` on `records` (ascending == arrival order). Returns the
/// number of optimizer steps taken.
std::size_t fit_phase(nn::MlpModel& model, const PreparedData& data,
                      std::span<const std::size_t> records, const PhaseSpec& phase,
                      const TrainHooks& hooks) {
  const auto& tc = *phase.train;
  tc.validate();
  if (records.empty()) {
    throw Error(Errc::empty_input, "task " + std::to_string(phase.task_id) + " has no training records");
  }
  Rng rng(derive_seed(phase.run_seed, kPhaseStream + phase.position));
  Rng replay_rng(derive_seed(phase.run_seed, kReplayStream + phase.position));
  auto adam = nn::AdamState<float>::for_model(model);
  std::vector<std::size_t> order(records.begin(), records.end());
  const std::size_t width = data.feature_dim;
  std::size_t steps = 0;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    std::size_t ingested = 0;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<replay::MemorySlot> replayed;
      if (phase.replay_from != nullptr && phase.replay_batch > 0) {
        replayed = phase.replay_from->sample(phase.replay_batch, replay_rng);
      }
      const std::size_t rows = (end - start) + replayed.size();
      nn::Matrix<float> x(rows, width);
      std::vector<int> labels(rows);
      for (std::size_t r = start; r < end; ++r) {
        const std::size_t index = order[r];
        const auto src = data.features.row(index);
        std::copy(src.begin(), src.end(), x.row(r - start).begin());
        labels[r - start] = data.labels[index];
        if (hooks.on_train_record) hooks.on_train_record(phase.position, data.tasks[index], data.record_ids[index]);
      }
      for (std::size_t k = 0; k < replayed.size(); ++k) {
        const auto src = replayed[k].feature.values();
        if (src.size() != width) throw Error(Errc::dimension_mismatch, "replayed feature width");
        std::copy(src.begin(), src.end(), x.row(end - start + k).begin());
        labels[end - start + k] = replayed[k].label_id;
      }

      auto fwd = nn::forward(model, x, tc.dropout_rate, true, rng);
      auto loss = nn::softmax_cross_entropy(fwd.logits, labels);
      if (!std::isfinite(loss.loss)) {
        throw Error(Errc::numeric_failure, "non-finite loss at task " + std::to_string(phase.task_id) +
                                               " epoch " + std::to_string(epoch));
      }
      const auto grads = nn::backward(model, fwd.cache, loss.dlogits);
      nn::adam_step(model, adam, grads, tc.learning_rate, tc.weight_decay, tc.decoupled_weight_decay);
      ++steps;
      loss_sum += loss.loss;
      ++batches;

      if (epoch == 0 && phase.ingest != nullptr) {
        const std::size_t upto = std::min(records.size(), ingested + (end - start));
        for (; ingested < upto; ++ingested) phase.ingest->insert(slot_for(data, records[ingested]));
      }
    }
    if (hooks.on_epoch) hooks.on_epoch(phase.position, epoch, loss_sum / static_cast<double>(batches));
  }
  return steps;
}

eval::RunReport base_report(const PreparedData& data, const RunConfig& config, std::string label) {
  eval::RunReport report;
  report.engine_version = eval::engine_version();
  report.label = std::move(label);
  report.config = config.echo();
  report.seed = config.seed;
  for (const auto& task : config.curriculum.tasks) {
    report.task_ids.push_back(task.task_id);
    report.task_names.push_back(task.name);
    report.test_counts.push_back(data.test_of(task.task_id).size());
  }
  report.matrix = eval::AccuracyMatrix(config.curriculum.tasks.size());
  return report;
}

std::vector<double> score_all_tasks(const nn::MlpModel& model, const PreparedData& data,
                                    const Curriculum& curriculum) {
  std::vector<double> row;
  for (const auto& task : curriculum.tasks) row.push_back(evaluate(model, data, task.task_id));
  return row;
}

std::string default_label(const RunConfig& config) {
  std::string label = std::string(to_string(config.mode)) + "/" + std::string(to_string(config.fusion));
  if (config.mode == TrainingMode::continual) {
    label += "/" + std::string(replay::to_string(config.policy));
  }
  return label + "/order=" + join(config.curriculum.order());
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string_view to_string(TrainingMode mode) noexcept {
  switch (mode) {
    case TrainingMode::joint_supervised: return "joint";
    case TrainingMode::taskwise: return "taskwise";
    case TrainingMode::continual: return "continual";
    case TrainingMode::continual_no_replay: return "continual-noreplay";
  }
  return "?";
}

TrainingMode parse_training_mode(std::string_view name) {
  if (name == "joint") return TrainingMode::joint_supervised;
  if (name == "taskwise") return TrainingMode::taskwise;
  if (name == "continual") return TrainingMode::continual;
  if (name == "continual-noreplay") return TrainingMode::continual_no_replay;
  throw Error(Errc::invalid_argument, "unknown training mode '" + std::string(name) + "'");
}

nn::TrainConfig default_first_task_config() {
  nn::TrainConfig config;
  config.learning_rate = 1e-4;
  config.weight_decay = 1e-5;
  config.dropout_rate = 0.2;
  config.batch_size = 256;
  config.epochs = 25;
  return config;
}

nn::TrainConfig default_later_task_config() {
  nn::TrainConfig config = default_first_task_config();
  config.learning_rate = 5e-6;
  config.weight_decay = 2e-5;
  return config;
}

std::vector<int> Curriculum::order() const {
  std::vector<int> ids;
  for (const auto& task : tasks) ids.push_back(task.task_id);
  return ids;
}

void Curriculum::validate() const {
  if (tasks.empty()) throw Error(Errc::invalid_curriculum, "curriculum has no tasks");
  std::set<int> seen;
  std::set<std::string> names;
  for (const auto& task : tasks) {
    if (!names.insert(task.name).second) {
      throw Error(Errc::invalid_curriculum, "task name '" + task.name + "' appears more than once");
    }
    if (!seen.insert(task.task_id).second) {
      throw Error(Errc::invalid_curriculum,
                  "task " + std::to_string(task.task_id) + " appears more than once");
    }
    if (task.label_ids.empty()) throw Error(Errc::invalid_curriculum, "task " + task.name + " has no labels");
  }
  first_task.validate();
  later_tasks.validate();
}

Curriculum make_curriculum(const data::Manifest& manifest, std::span<const int> order) {
  Curriculum curriculum;
  if (order.empty()) {
    for (const auto& task : manifest.tasks) curriculum.tasks.push_back({task.task_id, task.name, task.label_ids});
  } else {
    for (int id : order) {
      const auto* task = manifest.find_task(id);
      if (task == nullptr) throw Error(Errc::invalid_curriculum, "unknown task id " + std::to_string(id));
      curriculum.tasks.push_back({task->task_id, task->name, task->label_ids});
    }
  }
  curriculum.validate();
  return curriculum;
}

void RunConfig::validate() const {
  curriculum.validate();
  if (num_hidden_layers > 0 && hidden_dim == 0) throw Error(Errc::invalid_argument, "hidden_dim must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(Errc::invalid_argument, "test_fraction must be in (0, 1)");
  }
}

std::map<std::string, std::string> RunConfig::echo() const {
  std::map<std::string, std::string> out;
  out["mode"] = to_string(mode);
  out["fusion"] = to_string(fusion);
  out["policy"] = replay::to_string(policy);
  out["reservoir_scope"] = reservoir_scope == replay::ReservoirScope::per_class ? "per-class" : "global";
  out["per_class_capacity"] = std::to_string(per_class_capacity);
  out["replay_batch"] = std::to_string(replay_batch);
  out["seed"] = std::to_string(seed);
  out["hidden_dim"] = std::to_string(hidden_dim);
  out["num_hidden_layers"] = std::to_string(num_hidden_layers);
  out["order"] = join(curriculum.order());
  for (const auto& [prefix, tc] : {std::pair{"first", &curriculum.first_task}, std::pair{"later", &curriculum.later_tasks}}) {
    const std::string p(prefix);
    out[p + ".learning_rate"] = format_double(tc->learning_rate);
    out[p + ".weight_decay"] = format_double(tc->weight_decay);
    out[p + ".dropout_rate"] = format_double(tc->dropout_rate);
    out[p + ".batch_size"] = std::to_string(tc->batch_size);
    out[p + ".epochs"] = std::to_string(tc->epochs);
    out[p + ".decoupled_weight_decay"] = tc->decoupled_weight_decay ? "true" : "false";
  }
  return out;
}

namespace {

Json train_config_json(const nn::TrainConfig& tc) {
  return {{"learning_rate", tc.learning_rate}, {"weight_decay", tc.weight_decay},
          {"dropout_rate", tc.dropout_rate},   {"batch_size", tc.batch_size},
          {"epochs", tc.epochs},               {"seed", tc.seed},
          {"decoupled_weight_decay", tc.decoupled_weight_decay}};
}

nn::TrainConfig train_config_from(const Json& j) {
  nn::TrainConfig tc;
  tc.learning_rate = j.at("learning_rate").get<double>();
  tc.weight_decay = j.at("weight_decay").get<double>();
  tc.dropout_rate = j.at("dropout_rate").get<double>();
  tc.batch_size = j.at("batch_size").get<std::size_t>();
  tc.epochs = j.at("epochs").get<std::size_t>();
  tc.seed = j.at("seed").get<std::uint64_t>();
  tc.decoupled_weight_decay = j.at("decoupled_weight_decay").get<bool>();
  return tc;
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  Json tasks = Json::array();
  for (const auto& t : c.curriculum.tasks) {
    tasks.push_back({{"id", t.task_id}, {"name", t.name}, {"labels", t.label_ids}});
  }
  Json j = {{"mode", to_string(c.mode)},
            {"fusion", to_string(c.fusion)},
            {"policy", replay::to_string(c.policy)},
            {"reservoir_scope", c.reservoir_scope == replay::ReservoirScope::per_class ? "per-class" : "global"},
            {"per_class_capacity", c.per_class_capacity},
            {"replay_batch", c.replay_batch},
            {"seed", c.seed},
            {"hidden_dim", c.hidden_dim},
            {"num_hidden_layers", c.num_hidden_layers},
            {"test_fraction", c.test_fraction},
            {"curriculum",
             {{"tasks", std::move(tasks)},
              {"first_task", train_config_json(c.curriculum.first_task)},
              {"later_tasks", train_config_json(c.curriculum.later_tasks)}}}};
  return j.dump();
}

RunConfig run_config_from_json(std::string_view text) {
  RunConfig c;
  try {
    const Json j = Json::parse(text);
    c.mode = parse_training_mode(j.at("mode").get<std::string>());
    c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
    c.policy = replay::parse_buffer_policy(j.at("policy").get<std::string>());
    c.reservoir_scope = j.at("reservoir_scope").get<std::string>() == "global" ? replay::ReservoirScope::global
                                                                              : replay::ReservoirScope::per_class;
    c.per_class_capacity = j.at("per_class_capacity").get<std::size_t>();
    c.replay_batch = j.at("replay_batch").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.num_hidden_layers = j.at("num_hidden_layers").get<std::size_t>();
    c.test_fraction = j.at("test_fraction").get<double>();
    const auto& cur = j.at("curriculum");
    for (const auto& t : cur.at("tasks")) {
      c.curriculum.tasks.push_back(
          {t.at("id").get<int>(), t.at("name").get<std::string>(), t.at("labels").get<std::vector<int>>()});
    }
    c.curriculum.first_task = train_config_from(cur.at("first_task"));
    c.curriculum.later_tasks = train_config_from(cur.at("later_tasks"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt, std::string("run config JSON: ") + e.what());
  }
  return c;
}

std::vector<std::size_t> PreparedData::train_of(int task_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i : train) {
    if (tasks[i] == task_id) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> PreparedData::test_of(int task_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i : test) {
    if (tasks[i] == task_id) out.push_back(i);
  }
  return out;
}

PreparedData prepare(const data::Dataset& dataset, FusionMode fusion, double test_fraction,
                     std::uint64_t split_seed) {
  const auto& m = dataset.manifest;
  PreparedData out;
  out.fusion = fusion;
  out.feature_dim = fused_dim(m.d_img, m.d_txt, fusion);
  out.label_count = m.label_count();
  if (out.label_count == 0) throw Error(Errc::invalid_argument, "dataset has an empty label vocabulary");
  const std::size_t n = dataset.records.size();
  out.features = nn::Matrix<float>(n, out.feature_dim);
  out.labels.resize(n);
  out.tasks.resize(n);
  out.record_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& record = dataset.records[i];
    fuse_into(record.image_embedding.values(), record.text_embedding.values(), fusion, out.features.row(i));
    out.labels[i] = record.label_id;
    out.tasks[i] = record.task_id;
    out.record_ids[i] = record.record_id;
  }
  auto indices = data::split(dataset, test_fraction, split_seed);
  out.train = std::move(indices.train);
  out.test = std::move(indices.test);
  out.warnings = std::move(indices.warnings);
  return out;
}

double evaluate_indices(const nn::MlpModel& model, const PreparedData& data,
                        std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(Errc::empty_input, "no test records to evaluate");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const std::size_t end = std::min(indices.size(), start + kEvalChunk);
    nn::Matrix<float> x(end - start, data.feature_dim);
    for (std::size_t r = start; r < end; ++r) {
      const auto src = data.features.row(indices[r]);
      std::copy(src.begin(), src.end(), x.row(r - start).begin());
    }
    const auto predicted = nn::predict(model, x);
    for (std::size_t r = start; r < end; ++r) {
      if (predicted[r - start] == data.labels[indices[r]]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(indices.size());
}

double evaluate(const nn::MlpModel& model, const PreparedData& data, std::optional<int> task_filter) {
  if (!task_filter) return evaluate_indices(model, data, data.test);
  const auto indices = data.test_of(*task_filter);
  if (indices.empty()) {
    throw Error(Errc::empty_input, "task " + std::to_string(*task_filter) + " has no test records");
  }
  return evaluate_indices(model, data, indices);
}

RunResult train_supervised(const PreparedData& data, const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (config.mode != TrainingMode::joint_supervised) {
    throw Error(Errc::invalid_argument, "train_supervised needs mode joint");
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> records;
  for (const auto& task : config.curriculum.tasks) {
    const auto part = data.train_of(task.task_id);
    records.insert(records.end(), part.begin(), part.end());
  }
  std::sort(records.begin(), records.end());
  if (records.empty()) throw Error(Errc::empty_input, "dataset has no training records");

  RunResult result{fresh_model(data, config), base_report(data, config, default_label(config))};
  const auto& tc = config.curriculum.first_task;
  PhaseSpec phase{0, config.curriculum.tasks.front().task_id, &tc, nullptr, nullptr, 0, config.seed};
  const std::size_t steps = fit_phase(result.model, data, records, phase, hooks);
  for (const auto& task : config.curriculum.tasks) {
    result.report.hyper_trace.push_back({task.task_id, tc.learning_rate, tc.weight_decay, tc.epochs, steps});
  }
  result.report.matrix.append_row(score_all_tasks(result.model, data, config.curriculum));
  result.report.recompute_metrics();
  result.report.wall_clock_seconds = seconds_since(start);
  return result;
}

TaskwiseResult train_taskwise(const PreparedData& data, const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (config.mode != TrainingMode::taskwise) throw Error(Errc::invalid_argument, "train_taskwise needs mode taskwise");
  const auto start = std::chrono::steady_clock::now();
  TaskwiseResult result;
  result.report = base_report(data, config, default_label(config));
  const auto& tc = config.curriculum.first_task;
  std::vector<double> row;
  for (std::size_t pos = 0; pos < config.curriculum.tasks.size(); ++pos) {
    const auto& task = config.curriculum.tasks[pos];
    auto model = fresh_model(data, config);
    PhaseSpec phase{pos, task.task_id, &tc, nullptr, nullptr, 0, config.seed};
    const std::size_t steps = fit_phase(model, data, data.train_of(task.task_id), phase, hooks);
    result.report.hyper_trace.push_back({task.task_id, tc.learning_rate, tc.weight_decay, tc.epochs, steps});
    row.push_back(evaluate(model, data, task.task_id));
    result.models.push_back(std::move(model));
  }
  result.report.matrix.append_row(std::move(row));
  result.report.recompute_metrics();
  result.report.wall_clock_seconds = seconds_since(start);
  return result;
}

ContinualResult train_continual(const PreparedData& data, const RunConfig& config, const TrainHooks& hooks,
                                ContinualOptions options) {
  config.validate();
  if (config.mode != TrainingMode::continual && config.mode != TrainingMode::continual_no_replay) {
    throw Error(Errc::invalid_argument, "train_continual needs mode continual or continual-noreplay");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto& curriculum = config.curriculum;
  const std::size_t total = curriculum.tasks.size();

  ContinualResult result;
  auto& state = result.state;
  if (options.resume) {
    state = std::move(*options.resume);
    if (state.matrix.tasks() != total || state.next_position != state.matrix.rows_completed() ||
        state.next_position > total) {
      throw Error(Errc::invalid_curriculum, "resume state does not match the curriculum");
    }
    if (state.model.input_dim != data.feature_dim || state.model.output_dim != data.label_count) {
      throw Error(Errc::dimension_mismatch, "resumed model does not match the prepared data");
    }
  } else {
    state.model = fresh_model(data, config);
    state.memory = replay::EpisodicMemory(config.policy, config.per_class_capacity,
                                          derive_seed(config.seed, kMemoryStream), config.reservoir_scope);
    state.matrix = eval::AccuracyMatrix(total);
  }

  const bool with_replay = config.mode == TrainingMode::continual;
  const std::size_t end = options.stop_after ? std::min(total, *options.stop_after) : total;
  for (std::size_t pos = state.next_position; pos < end; ++pos) {
    const auto& task = curriculum.tasks[pos];
    const auto& tc = curriculum.config_for(pos);
    PhaseSpec phase{pos,
                    task.task_id,
                    &tc,
                    with_replay ? &state.memory : nullptr,
                    with_replay && pos > 0 ? &state.memory : nullptr,
                    config.replay_batch,
                    config.seed};
    const std::size_t steps = fit_phase(state.model, data, data.train_of(task.task_id), phase, hooks);
    state.hyper_trace.push_back({task.task_id, tc.learning_rate, tc.weight_decay, tc.epochs, steps});
    state.matrix.append_row(score_all_tasks(state.model, data, curriculum));
    state.next_position = pos + 1;
  }

  result.report = base_report(data, config, default_label(config));
  result.report.matrix = state.matrix;
  result.report.hyper_trace = state.hyper_trace;
  if (state.matrix.rows_completed() > 0) result.report.recompute_metrics();
  result.report.wall_clock_seconds = seconds_since(start);
  return result;
}

eval::RunReport run(const PreparedData& data, const RunConfig& config, const TrainHooks& hooks) {
  switch (config.mode) {
    case TrainingMode::joint_supervised: return train_supervised(data, config, hooks).report;
    case TrainingMode::taskwise: return train_taskwise(data, config, hooks).report;
    case TrainingMode::continual:
    case TrainingMode::continual_no_replay: return train_continual(data, config, hooks).report;
  }
  throw Error(Errc::invalid_argument, "unknown training mode");
}

}  // namespace cvqa::train
