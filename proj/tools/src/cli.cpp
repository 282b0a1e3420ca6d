#include "cvqa/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include "cvqa/checkpoint.hpp"
#include "cvqa/curriculum.hpp"
#include "cvqa/dataset.hpp"
#include "cvqa/metrics.hpp"
#include "cvqa/sweep.hpp"
#include "cvqa/synthetic.hpp"
#include "cvqa/zeroshot.hpp"

namespace cvqa::cli {

namespace fs = std::filesystem;

int exit_code_for(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument:
    case Errc::invalid_curriculum:
    case Errc::policy_mismatch:
      return kExitUsage;
    case Errc::numeric_failure:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

namespace {

// Values shared by train and sweep. Option names are the kebab-case form of
// the config-file keys (per_class_capacity <-> --per-class-capacity).
struct TrainFlags {
  std::string data;
  std::string mode = "continual";
  std::string fusion = "mul";
  std::string policy = "reservoir";
  std::string reservoir_scope = "per-class";
  std::string order;
  std::size_t per_class_capacity = 25;
  std::size_t replay_batch = 64;
  std::size_t hidden_dim = 1024;
  std::size_t num_hidden_layers = 3;
  std::uint64_t seed = 0;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double later_learning_rate = 5e-6;
  double later_weight_decay = 2e-5;
  double dropout_rate = 0.2;
  std::size_t batch_size = 256;
  std::size_t epochs = 25;
  bool coupled_weight_decay = false;
  double test_fraction = 0.2;
  std::string out_dir = ".";
  bool record_timing = false;
};

void add_train_flags(CLI::App& app, TrainFlags& f, bool with_mode) {
  app.add_option("--data", f.data, "EMB1 dataset (manifest alongside)")->required();
  if (with_mode) {
    app.add_option("--mode", f.mode, "joint | taskwise | continual | continual-noreplay")
        ->check(CLI::IsMember({"joint", "taskwise", "continual", "continual-noreplay"}));
    app.add_option("--policy", f.policy, "reservoir | ring | mof")
        ->check(CLI::IsMember({"reservoir", "ring", "mof", "mean-of-features"}));
    app.add_option("--order", f.order, "comma-separated task ids, e.g. 2,0,1");
  }
  app.add_option("--fusion", f.fusion, "add | mul | cat")->check(CLI::IsMember({"add", "mul", "cat"}));
  app.add_option("--reservoir-scope", f.reservoir_scope, "per-class | global")
      ->check(CLI::IsMember({"per-class", "global"}));
  app.add_option("--per-class-capacity", f.per_class_capacity, "memory slots per class");
  app.add_option("--replay-batch", f.replay_batch, "replayed samples appended to each batch");
  app.add_option("--hidden-dim", f.hidden_dim);
  app.add_option("--num-hidden-layers", f.num_hidden_layers);
  app.add_option("--seed", f.seed);
  app.add_option("--learning-rate", f.learning_rate, "first task");
  app.add_option("--weight-decay", f.weight_decay, "first task");
  app.add_option("--later-learning-rate", f.later_learning_rate);
  app.add_option("--later-weight-decay", f.later_weight_decay);
  app.add_option("--dropout-rate", f.dropout_rate);
  app.add_option("--batch-size", f.batch_size);
  app.add_option("--epochs", f.epochs, "per task");
  app.add_flag("--coupled-weight-decay", f.coupled_weight_decay, "L2 term in the gradient instead of decoupled decay");
  app.add_option("--test-fraction", f.test_fraction, "only when the manifest carries no split");
  app.add_option("--out-dir", f.out_dir);
  app.add_flag("--record-timing", f.record_timing, "store wall-clock seconds in reports");
}

std::vector<int> parse_id_list(const std::string& text) {
  std::vector<int> ids;
  std::stringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != token.size()) throw Error(Errc::invalid_argument, "bad task id '" + token + "'");
    ids.push_back(value);
  }
  if (ids.empty()) throw Error(Errc::invalid_argument, "empty task id list");
  return ids;
}

fs::path resolve_data_path(const std::string& given) {
  fs::path path(given);
  if (path.is_relative() && !fs::exists(path)) {
    if (const char* dir = std::getenv("CVQA_DATA_DIR"); dir != nullptr && *dir != '\0') {
      return fs::path(dir) / path;
    }
  }
  return path;
}

nn::TrainConfig train_config(const TrainFlags& f, bool later) {
  nn::TrainConfig tc;
  tc.learning_rate = later ? f.later_learning_rate : f.learning_rate;
  tc.weight_decay = later ? f.later_weight_decay : f.weight_decay;
  tc.dropout_rate = f.dropout_rate;
  tc.batch_size = f.batch_size;
  tc.epochs = f.epochs;
  tc.seed = f.seed;
  tc.decoupled_weight_decay = !f.coupled_weight_decay;
  return tc;
}

train::RunConfig run_config(const TrainFlags& f, const data::Manifest& manifest) {
  train::RunConfig config;
  config.mode = train::parse_training_mode(f.mode);
  config.fusion = parse_fusion_mode(f.fusion);
  config.policy = replay::parse_buffer_policy(f.policy);
  config.reservoir_scope = f.reservoir_scope == "global" ? replay::ReservoirScope::global : replay::ReservoirScope::per_class;
  config.per_class_capacity = f.per_class_capacity;
  config.replay_batch = f.replay_batch;
  config.seed = f.seed;
  config.hidden_dim = f.hidden_dim;
  config.num_hidden_layers = f.num_hidden_layers;
  config.test_fraction = f.test_fraction;
  const auto order = f.order.empty() ? std::vector<int>{} : parse_id_list(f.order);
  config.curriculum = train::make_curriculum(manifest, order);
  config.curriculum.first_task = train_config(f, false);
  config.curriculum.later_tasks = train_config(f, true);
  config.validate();
  return config;
}

void print_report(const eval::RunReport& report, std::ostream& out) {
  out << eval::render_table(std::span(&report, 1));
  if (report.forgetting) {
    char line[64];
    std::snprintf(line, sizeof line, "mean forgetting: %.2f\n", report.forgetting->mean);
    out << line;
  }
}

void write_reports(const eval::RunReport& report, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  eval::emit_report(report, eval::ReportFormat::json, dir / (stem + ".json"));
  eval::emit_report(report, eval::ReportFormat::csv, dir / (stem + ".csv"));
  eval::emit_report(report, eval::ReportFormat::svg, dir / (stem + ".svg"));
}

int cmd_gen_synthetic(const data::SyntheticSpec& spec, const std::string& out_path, const std::string& prompts_path,
                      std::ostream& out) {
  const auto generated = data::gen_synthetic(spec);
  if (const auto parent = fs::path(out_path).parent_path(); !parent.empty()) fs::create_directories(parent);
  data::save_dataset(generated.dataset, out_path);
  out << "wrote " << generated.dataset.records.size() << " records to " << out_path << '\n';
  if (!prompts_path.empty()) {
    data::save_prompt_table(generated.prompts, prompts_path);
    out << "wrote prompt table to " << prompts_path << '\n';
  }
  return kExitOk;
}

int cmd_train(const TrainFlags& f, const std::string& resume, std::optional<std::size_t> stop_after, std::ostream& out,
              std::ostream& err) {
  const auto dataset = data::load_dataset(resolve_data_path(f.data));
  std::optional<train::RunCheckpoint> checkpoint;
  if (!resume.empty()) checkpoint = train::load_run1(resume);
  const auto config = checkpoint ? checkpoint->config : run_config(f, dataset.manifest);
  const auto prepared = train::prepare(dataset, config.fusion, config.test_fraction, config.seed);
  for (const auto& w : prepared.warnings) err << "warning: " << w << '\n';

  const fs::path dir(f.out_dir);
  fs::create_directories(dir);
  eval::RunReport report;
  switch (config.mode) {
    case train::TrainingMode::joint_supervised: {
      if (checkpoint) throw Error(Errc::invalid_argument, "--resume applies to continual runs only");
      auto result = train::train_supervised(prepared, config);
      train::RunCheckpoint cp{config, {}};
      cp.state.next_position = 1;
      cp.state.model = result.model;
      cp.state.matrix = result.report.matrix;
      cp.state.hyper_trace = result.report.hyper_trace;
      train::save_run1(cp, dir / "run.run1");
      report = std::move(result.report);
      break;
    }
    case train::TrainingMode::taskwise: {
      if (checkpoint) throw Error(Errc::invalid_argument, "--resume applies to continual runs only");
      auto result = train::train_taskwise(prepared, config);
      for (std::size_t i = 0; i < result.models.size(); ++i) {
        nn::save_mlp1(result.models[i], dir / ("task" + std::to_string(config.curriculum.tasks[i].task_id) + ".mlp1"));
      }
      report = std::move(result.report);
      break;
    }
    case train::TrainingMode::continual:
    case train::TrainingMode::continual_no_replay: {
      train::ContinualOptions options;
      if (checkpoint) options.resume = std::move(checkpoint->state);
      options.stop_after = stop_after;
      auto result = train::train_continual(prepared, config, {}, std::move(options));
      train::save_run1({config, result.state}, dir / "run.run1");
      report = std::move(result.report);
      break;
    }
  }
  if (!f.record_timing) report.wall_clock_seconds = 0.0;
  if (report.matrix.rows_completed() > 0) {
    write_reports(report, dir, "report");
    print_report(report, out);
  }
  return kExitOk;
}

int cmd_zeroshot(const std::string& data_path, const std::string& prompts_path, const zeroshot::ZeroShotConfig& config,
                 const std::string& out_dir, std::ostream& out) {
  const auto dataset = data::load_dataset(resolve_data_path(data_path));
  const fs::path prompts = resolve_data_path(prompts_path);
  if (!fs::exists(prompts)) throw Error(Errc::io_error, "prompt table " + prompts.string() + " not found");
  const auto table = data::load_prompt_table(prompts);
  const auto report = zeroshot::evaluate_zero_shot(dataset, table, config);
  if (!out_dir.empty()) write_reports(report, out_dir, "zeroshot");
  print_report(report, out);
  return kExitOk;
}

int cmd_sweep(const TrainFlags& f, const std::string& policies, const std::string& orders, std::size_t parallel,
              bool allow_n, std::ostream& out, std::ostream& err) {
  const auto dataset = data::load_dataset(resolve_data_path(f.data));
  const auto config = run_config(f, dataset.manifest);
  const auto prepared = train::prepare(dataset, config.fusion, config.test_fraction, config.seed);
  for (const auto& w : prepared.warnings) err << "warning: " << w << '\n';

  train::SweepOptions options;
  options.master_seed = f.seed;
  options.allow_any_task_count = allow_n;
  options.workers = parallel == 0 ? std::max(1u, std::thread::hardware_concurrency()) : parallel;
  if (policies != "all") {
    options.policies.clear();
    std::stringstream in(policies);
    std::string name;
    while (std::getline(in, name, ',')) options.policies.push_back(replay::parse_buffer_policy(name));
  }
  if (orders != "all") {
    std::stringstream in(orders);
    std::string order;
    while (std::getline(in, order, ';')) options.orders.push_back(parse_id_list(order));
  }

  auto result = train::permutation_sweep(dataset.manifest, prepared, config, options);
  const fs::path dir = fs::path(f.out_dir) / "sweep";
  fs::create_directories(dir);
  for (auto& entry : result.entries) {
    if (!f.record_timing) entry.report.wall_clock_seconds = 0.0;
    std::string stem = "run" + std::to_string(entry.run_index) + "_" + std::string(replay::to_string(entry.policy));
    for (int id : entry.order) stem += "_" + std::to_string(id);
    write_reports(entry.report, dir, stem);
  }
  const auto table = train::render_sweep_table(result);
  eval::write_text_file(dir / "aggregate.txt", table);
  out << table;
  return kExitOk;
}

int cmd_validate(const std::string& data_path, const std::string& expected, bool strict, std::ostream& out) {
  const auto dataset = data::load_dataset(resolve_data_path(data_path));
  data::ExpectedCounts want;
  if (expected == "floodnet") {
    want = data::floodnet_expected_counts();
  } else if (!expected.empty()) {
    std::ifstream in(resolve_data_path(expected));
    if (!in) throw Error(Errc::io_error, "cannot open " + expected);
    std::stringstream text;
    text << in.rdbuf();
    want = data::expected_counts_from_json(text.str());
  }
  const auto report = data::validate_counts(dataset, want);
  out << "dataset " << dataset.manifest.dataset_name << ": " << report.total << " records, " << report.train
      << " train, " << report.test << " test, " << report.unassigned << " unassigned\n";
  for (const auto& m : report.mismatches) {
    out << "mismatch: " << m.quantity << " expected " << m.expected << " got " << m.actual << '\n';
  }
  const bool ok = report.ok() && report.unassigned == 0;
  out << (ok ? "counts OK\n" : "counts differ\n");
  return (!ok && strict) ? kExitData : kExitOk;
}

/// Moves `--config FILE` out of the argument list and splices the file's
/// key = value lines in as `--key=value` right after the subcommand, so that
/// explicit flags (which come later) take precedence.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> config_path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].starts_with("--config=")) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!config_path) return args;

  std::ifstream in(*config_path);
  if (!in) throw Error(Errc::io_error, "cannot open config file " + *config_path);
  std::vector<std::string> injected;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#' || line[first] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::invalid_argument, *config_path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r\"");
      const auto e = s.find_last_not_of(" \t\r\"");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    injected.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  std::size_t at = 1;
  while (at < args.size() && args[at].starts_with("-")) ++at;
  if (at < args.size()) ++at;
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), injected.begin(), injected.end());
  return args;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continual-learning VQA engine over precomputed image/question embeddings", "cvqa"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", eval::engine_version());
  std::string unused_config;
  app.add_option("--config", unused_config, "key = value file; explicit flags win");

  data::SyntheticSpec spec;
  std::string synth_out;
  std::string synth_prompts;
  auto* gen = app.add_subcommand("gen-synthetic", "write a seeded synthetic EMB1 dataset and manifest");
  gen->add_option("--out", synth_out, "output EMB1 path")->required();
  gen->add_option("--prompts", synth_prompts, "also write a prompt table of the class means");
  gen->add_option("--tasks", spec.tasks);
  gen->add_option("--classes-per-task", spec.classes_per_task);
  gen->add_option("--dim-img", spec.dim_img);
  gen->add_option("--dim-txt", spec.dim_txt);
  gen->add_option("--cluster-separation", spec.cluster_separation, "minimum distance between class means, in sigma");
  gen->add_option("--train-per-class", spec.train_per_class);
  gen->add_option("--test-per-class", spec.test_per_class);
  gen->add_option("--seed", spec.seed);
  gen->add_option("--drift", spec.drift, "within-task drift of class means, in sigma");
  gen->add_option("--text-noise", spec.text_noise);

  TrainFlags train_flags;
  std::string resume;
  std::optional<std::size_t> stop_after;
  auto* train_cmd = app.add_subcommand("train", "train in any mode, write RUN1 checkpoint and reports");
  add_train_flags(*train_cmd, train_flags, true);
  train_cmd->add_option("--resume", resume, "RUN1 checkpoint to continue from (continual modes)");
  train_cmd->add_option("--stop-after", stop_after, "stop once this many tasks are complete");

  std::string zs_data;
  std::string zs_prompts;
  std::string zs_out;
  zeroshot::ZeroShotConfig zs_config;
  auto* zs = app.add_subcommand("zeroshot", "score test images against prompt embeddings");
  zs->add_option("--data", zs_data)->required();
  zs->add_option("--prompts", zs_prompts, "EMB1 prompt table")->required();
  zs->add_option("--temperature", zs_config.temperature);
  zs->add_option("--test-fraction", zs_config.test_fraction);
  zs->add_option("--seed", zs_config.split_seed);
  zs->add_option("--out-dir", zs_out);

  TrainFlags sweep_flags;
  std::string policies = "all";
  std::string orders = "all";
  std::size_t parallel = 1;
  bool allow_n = false;
  auto* sweep = app.add_subcommand("sweep", "every task order x memory policy, continual with replay");
  add_train_flags(*sweep, sweep_flags, false);
  sweep->add_option("--policies", policies, "all, or a comma list");
  sweep->add_option("--orders", orders, "all, or ';'-separated id lists");
  sweep->add_option("--parallel", parallel, "worker threads (0 = hardware threads)");
  sweep->add_flag("--allow-n", allow_n, "permit task counts other than 3");

  std::string val_data;
  std::string val_expected;
  bool strict = false;
  auto* val = app.add_subcommand("validate", "check split counts of a dataset");
  val->add_option("--data", val_data)->required();
  val->add_option("--expected", val_expected, "'floodnet' or a JSON file of expected counts");
  val->add_flag("--strict", strict, "exit nonzero on any mismatch");

  try {
    const auto args = expand_config(raw_args);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kExitOk : kExitUsage;
    }

    if (gen->parsed()) return cmd_gen_synthetic(spec, synth_out, synth_prompts, out);
    if (train_cmd->parsed()) return cmd_train(train_flags, resume, stop_after, out, err);
    if (zs->parsed()) return cmd_zeroshot(zs_data, zs_prompts, zs_config, zs_out, out);
    if (sweep->parsed()) return cmd_sweep(sweep_flags, policies, orders, parallel, allow_n, out, err);
    if (val->parsed()) return cmd_validate(val_data, val_expected, strict, out);
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace cvqa::cli
