// Standalone acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cvqa/checkpoint.hpp"
#include "cvqa/curriculum.hpp"
#include "cvqa/dataset.hpp"
#include "cvqa/error.hpp"
#include "cvqa/metrics.hpp"
#include "cvqa/nn.hpp"
#include "cvqa/replay.hpp"
#include "cvqa/sweep.hpp"
#include "cvqa/synthetic.hpp"
#include "cvqa/zeroshot.hpp"
#include "test_util.hpp"

using namespace cvqa;

namespace {

// Pinned tolerances.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 10.0;
constexpr double kNormTarget = 1e-2;
constexpr double kJointAccuracy = 99.0;
constexpr double kJointBudgetSeconds = 60.0;
constexpr double kNoReplayMinDrop = 30.0;
constexpr double kReservoirMaxDrop = 10.0;
constexpr double kChiSquareMinP = 0.001;
constexpr double kGradMaxSkippedFraction = 0.01;
constexpr int kMaxOutside3Sigma = 10;
constexpr double kWorstZ = 4.9;
constexpr double kMofTolerance = 1e-6;
constexpr double kBufferBudgetSeconds = 30.0;
constexpr int kSweepMinWins = 2;
constexpr int kRoundTrips = 100;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, f, v);
  return buffer;
}

// ---------------------------------------------------------------- gradients

struct GradientProbe {
  double worst = 0.0;
  std::size_t skipped = 0;
  std::size_t probed = 0;
};

// Central differences against backward(). A probe whose +-h step flips a ReLU
// straddles a kink where the derivative is undefined, so it is counted and skipped.
void probe_gradients(nn::MlpModel64 model, const nn::Matrix<double>& x, const std::vector<int>& labels,
                     GradientProbe& tally) {
  const std::vector<nn::Matrix<double>> no_masks;
  auto loss_of = [&] { return nn::softmax_cross_entropy(nn::forward_with_masks(model, x, no_masks).logits, labels).loss; };
  auto pattern = [&] {
    std::vector<bool> active;
    for (const auto& h : nn::forward_with_masks(model, x, no_masks).cache.hidden) {
      for (double v : h.data) active.push_back(v > 0.0);
    }
    return active;
  };
  const auto fwd = nn::forward_with_masks(model, x, no_masks);
  const auto loss = nn::softmax_cross_entropy(fwd.logits, labels);
  const auto grads = nn::backward(model, fwd.cache, loss.dlogits);
  const auto base_pattern = pattern();
  const double h = 1e-4;
  auto probe = [&](double& param, double analytic) {
    const double saved = param;
    ++tally.probed;
    param = saved + h;
    const double up = loss_of();
    const bool up_same = pattern() == base_pattern;
    param = saved - h;
    const double down = loss_of();
    const bool down_same = pattern() == base_pattern;
    param = saved;
    if (!up_same || !down_same) {
      ++tally.skipped;
      return;
    }
    const double numeric = (up - down) / (2 * h);
    tally.worst = std::max(tally.worst,
                           std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    for (std::size_t i = 0; i < model.layers[l].weights.data.size(); ++i) {
      probe(model.layers[l].weights.data[i], grads.layers[l].weights.data[i]);
    }
    for (std::size_t i = 0; i < model.layers[l].biases.size(); ++i) {
      probe(model.layers[l].biases[i], grads.layers[l].biases[i]);
    }
  }
}

Outcome gradient_correctness() {
  const auto start = Clock::now();
  Rng rng(2001);
  GradientProbe tally;
  for (int m = 0; m < 10; ++m) {
    const std::size_t in = 2 + rng.uniform_index(31);
    const std::size_t hidden = 2 + rng.uniform_index(31);
    const std::size_t out = 2 + rng.uniform_index(31);
    const std::size_t layers = 2 + rng.uniform_index(3);  // linear layers, so 1-3 hidden tiers
    const auto model = nn::init_model<double>(in, hidden, layers - 1, out, rng.next_u64());
    nn::Matrix<double> x(8, in);
    for (double& v : x.data) v = rng.normal();
    std::vector<int> labels(8);
    for (int& l : labels) l = static_cast<int>(rng.uniform_index(out));
    probe_gradients(model, x, labels, tally);
  }
  const double elapsed = seconds_since(start);
  const double skipped_fraction = static_cast<double>(tally.skipped) / static_cast<double>(tally.probed);
  return {tally.worst < kGradTolerance && skipped_fraction <= kGradMaxSkippedFraction && elapsed < kGradBudgetSeconds,
          "max rel err " + fmt("%.3g", tally.worst) + " (< 1e-4) over " + std::to_string(tally.probed - tally.skipped) +
              " probes, " + std::to_string(tally.skipped) + " straddling a ReLU kink skipped (<= 1%), " +
              fmt("%.2f", elapsed) + " s (< 10 s)"};
}

// ---------------------------------------------------------------- optimizer

Outcome optimizer_sanity() {
  nn::MlpModel64 model;
  model.input_dim = 2;
  model.output_dim = 1;
  model.layers.push_back({nn::Matrix<double>(1, 2), {0.0}});
  model.layers[0].weights.data = {1.0, 1.0};  // |w0| = sqrt(2)
  nn::AdamState<double> state;
  for (int t = 0; t < 200; ++t) {
    nn::Gradients<double> g;
    g.layers.push_back({nn::Matrix<double>(1, 2), {0.0}});
    for (std::size_t i = 0; i < 2; ++i) g.layers[0].weights.data[i] = 2 * model.layers[0].weights.data[i];
    nn::adam_step(model, state, g, 0.1, 0.0);
  }
  const double norm = std::hypot(model.layers[0].weights.data[0], model.layers[0].weights.data[1]);

  Rng rng(2002);
  auto net = nn::init_model<float>(2, 8, 1, 2, 2003);
  nn::Matrix<float> x(32, 2);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < 32; ++i) {
    labels[i] = static_cast<int>(i % 2);
    x(i, 0) = static_cast<float>((labels[i] == 0 ? -2.0 : 2.0) + 0.3 * rng.normal());
    x(i, 1) = static_cast<float>(0.3 * rng.normal());
  }
  nn::AdamState<float> adam;
  double previous = std::numeric_limits<double>::infinity();
  int increases = 0;
  for (int step = 0; step < 50; ++step) {
    const auto fwd = nn::forward(net, x, 0.0, false, rng);
    const auto loss = nn::softmax_cross_entropy(fwd.logits, labels);
    if (!(loss.loss < previous)) ++increases;
    previous = loss.loss;
    nn::adam_step(net, adam, nn::backward(net, fwd.cache, loss.dlogits), 0.01, 0.0);
  }
  return {norm < kNormTarget && increases == 0,
          "|w| after 200 steps " + fmt("%.3g", norm) + " (< 1e-2), non-decreasing loss steps " +
              std::to_string(increases) + " of 50"};
}

// ---------------------------------------------------------------- training

data::SyntheticSpec separable_spec() {
  data::SyntheticSpec s;  // 3 tasks x 2 classes, dims 32/32, 8 sigma, 200/100 per class
  s.seed = 1;
  return s;
}

train::RunConfig default_config(const data::Manifest& manifest, train::TrainingMode mode) {
  train::RunConfig c;
  c.mode = mode;
  c.curriculum = train::make_curriculum(manifest);
  return c;
}

Outcome joint_supervised(const train::PreparedData& prepared, const data::Manifest& manifest) {
  const auto start = Clock::now();
  const auto result = train::train_supervised(prepared, default_config(manifest, train::TrainingMode::joint_supervised));
  const double elapsed = seconds_since(start);
  return {result.report.overall >= kJointAccuracy && elapsed < kJointBudgetSeconds,
          "overall " + fmt("%.2f", result.report.overall) + "% (>= 99), " + fmt("%.1f", elapsed) + " s (< 60 s)"};
}

Outcome forgetting(const train::PreparedData& prepared, const data::Manifest& manifest) {
  auto config = default_config(manifest, train::TrainingMode::continual_no_replay);
  // Later tasks use the first-task rate; at 5e-6 they are never learned and nothing can be forgotten.
  config.curriculum.later_tasks.learning_rate = 1e-4;
  config.curriculum.later_tasks.weight_decay = 1e-5;
  const auto baseline = train::train_continual(prepared, config).report;
  config.mode = train::TrainingMode::continual;
  config.policy = replay::BufferPolicy::reservoir;
  config.per_class_capacity = 25;
  config.replay_batch = 64;
  const auto reservoir = train::train_continual(prepared, config).report;

  const std::size_t last = baseline.matrix.tasks() - 1;
  const double drop_none = baseline.matrix.at(0, 0) - baseline.matrix.at(last, 0);
  const double drop_res = reservoir.matrix.at(0, 0) - reservoir.matrix.at(last, 0);
  return {drop_none >= kNoReplayMinDrop && drop_res <= kReservoirMaxDrop,
          "task-1 drop: no replay " + fmt("%.2f", drop_none) + " (>= 30), reservoir " + fmt("%.2f", drop_res) +
              " (<= 10)"};
}

// ---------------------------------------------------------------- buffers

Outcome buffer_statistics() {
  const auto start = Clock::now();
  constexpr int capacity = 50, n = 1000, trials = 2000;
  std::vector<int> resident(n, 0);
  for (int t = 0; t < trials; ++t) {
    replay::EpisodicMemory memory(replay::BufferPolicy::reservoir, capacity, derive_seed(3001, static_cast<std::uint64_t>(t)));
    for (int i = 0; i < n; ++i) memory.insert({EmbeddingVector{static_cast<float>(i)}, 0, 0, 1.0});
    for (const auto& s : memory.slots_of(0)) ++resident[static_cast<std::size_t>(s.feature[0])];
  }
  const double p = static_cast<double>(capacity) / n;
  const double expected = p * trials;
  const double sigma = std::sqrt(p * (1 - p) / trials);
  double chi2 = 0.0;
  double worst = 0.0;
  int outside = 0;
  for (int c : resident) {
    chi2 += (c - expected) * (c - expected) / expected;
    const double z = std::abs(static_cast<double>(c) / trials - p) / sigma;
    worst = std::max(worst, z);
    outside += z > 3.0 ? 1 : 0;
  }
  const double p_value = cvqa::testing::chi_square_sf(chi2, n - 1);

  replay::EpisodicMemory ring(replay::BufferPolicy::ring, capacity, 0);
  for (int i = 0; i < 3 * n; ++i) ring.insert({EmbeddingVector{static_cast<float>(i)}, i % 3, 0, 1.0});
  bool ring_ok = true;
  for (int c = 0; c < 3; ++c) {
    const auto slots = ring.slots_of(c);
    ring_ok = ring_ok && slots.size() == capacity;
    for (int k = 0; k < capacity && ring_ok; ++k) {
      const int expected_item = 3 * (n - capacity + k) + c;
      ring_ok = slots[static_cast<std::size_t>(k)].feature[0] == static_cast<float>(expected_item);
    }
  }

  Rng rng(3002);
  constexpr std::size_t d = 16;
  std::vector<std::vector<float>> features;
  replay::EpisodicMemory mof(replay::BufferPolicy::mean_of_features, capacity, 0);
  for (int i = 0; i < n; ++i) {
    features.push_back(cvqa::testing::random_floats(rng, d, 3.0));
    mof.insert({EmbeddingVector(features.back()), 0, 0, 1.0});
  }
  const auto stored = mof.slots_of(0).at(0).feature;
  double mof_err = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    for (const auto& f : features) sum += f[j];
    const double mean = sum / n;
    double correction = 0.0;
    for (const auto& f : features) correction += f[j] - mean;
    mof_err = std::max(mof_err, std::abs(static_cast<double>(stored[j]) - (mean + correction / n)));
  }
  const double elapsed = seconds_since(start);
  const bool pass = p_value > kChiSquareMinP && outside <= kMaxOutside3Sigma && worst < kWorstZ && ring_ok &&
                    mof_err < kMofTolerance && elapsed < kBufferBudgetSeconds;
  return {pass, "chi2 p " + fmt("%.3g", p_value) + " (> 0.001), beyond 3 sigma " + std::to_string(outside) +
                    " of 1000 (<= 10, worst z " + fmt("%.2f", worst) + " < 4.9), ring " + (ring_ok ? "exact" : "WRONG") +
                    ", mof err " + fmt("%.2g", mof_err) + " (< 1e-6), " + fmt("%.1f", elapsed) + " s (< 30 s)"};
}

// ---------------------------------------------------------------- sweep

Outcome permutation_sweep() {
  data::SyntheticSpec spec;
  spec.seed = 1;
  spec.dim_img = 16;
  spec.dim_txt = 16;
  spec.cluster_separation = 4.0;
  spec.drift = 12.0;
  const auto synth = data::gen_synthetic(spec);
  const auto& manifest = synth.dataset.manifest;
  const auto prepared = train::prepare(synth.dataset, FusionMode::mul, 0.2, 0);
  auto base = default_config(manifest, train::TrainingMode::continual);
  base.hidden_dim = 64;
  base.curriculum.first_task.learning_rate = 1e-3;
  base.curriculum.later_tasks.learning_rate = 1e-3;

  int wins = 0;
  bool complete = true;
  bool deterministic = true;
  bool parallel_identical = true;
  std::string ranks;
  for (std::uint64_t master : {1u, 2u, 3u}) {
    train::SweepOptions options;
    options.master_seed = master;
    const auto result = train::permutation_sweep(manifest, prepared, base, options);
    complete = complete && result.entries.size() == 18 &&
               std::all_of(result.entries.begin(), result.entries.end(),
                           [](const train::SweepEntry& e) { return e.report.matrix.complete(); });
    const auto table = train::render_sweep_table(result);
    if (master == 1) {
      deterministic = table == train::render_sweep_table(train::permutation_sweep(manifest, prepared, base, options));
      auto parallel = options;
      parallel.workers = 4;
      parallel_identical = table == train::render_sweep_table(train::permutation_sweep(manifest, prepared, base, parallel));
    }
    const auto& top = result.ranking.front();
    const bool strict = result.ranking.size() > 1 && top.mean_average_accuracy > result.ranking[1].mean_average_accuracy;
    if (top.policy == replay::BufferPolicy::reservoir && strict) ++wins;
    ranks += (ranks.empty() ? "" : ", ") + std::string(replay::to_string(top.policy));
  }
  return {complete && deterministic && parallel_identical && wins >= kSweepMinWins,
          "18 runs x 3 seeds " + std::string(complete ? "complete" : "INCOMPLETE") + ", repeat " +
              (deterministic ? "identical" : "DIFFERS") + ", serial vs parallel " +
              (parallel_identical ? "identical" : "DIFFERS") + ", top policy per seed [" + ranks +
              "], reservoir rank-1 " + std::to_string(wins) + " of 3 (>= 2)"};
}

// ---------------------------------------------------------------- formats

data::EmbeddingRecord random_record(Rng& rng, std::size_t d_img, std::size_t d_txt) {
  data::EmbeddingRecord r;
  r.record_id = rng.next_u64();
  r.task_id = static_cast<std::uint16_t>(rng.uniform_index(65536));
  r.label_id = static_cast<std::uint16_t>(rng.uniform_index(65536));
  if (d_img > 0) r.image_embedding = EmbeddingVector(cvqa::testing::random_floats(rng, d_img));
  r.text_embedding = EmbeddingVector(cvqa::testing::random_floats(rng, d_txt));
  return r;
}

eval::RunReport random_report(Rng& rng) {
  eval::RunReport r;
  r.engine_version = eval::engine_version();
  r.label = "r" + std::to_string(rng.uniform_index(100));
  r.seed = rng.next_u64();
  r.config = {{"k", std::to_string(rng.uniform())}};
  const std::size_t t = 1 + rng.uniform_index(5);
  r.matrix = eval::AccuracyMatrix(t);
  for (std::size_t i = 0, rows = 1 + rng.uniform_index(t); i < rows; ++i) {
    std::vector<double> row(t);
    for (double& a : row) a = 100.0 * rng.uniform();
    r.matrix.append_row(row);
  }
  for (std::size_t j = 0; j < t; ++j) {
    r.task_ids.push_back(static_cast<int>(j));
    r.task_names.push_back("task " + std::to_string(j));
    r.test_counts.push_back(1 + rng.uniform_index(1000));
    r.hyper_trace.push_back({static_cast<int>(j), rng.uniform(), rng.uniform(), rng.uniform_index(9), rng.uniform_index(999)});
  }
  r.recompute_metrics();
  r.wall_clock_seconds = rng.uniform();
  return r;
}

train::RunCheckpoint random_checkpoint(Rng& rng) {
  train::RunCheckpoint cp;
  const std::size_t tasks = 1 + rng.uniform_index(4);
  for (std::size_t t = 0; t < tasks; ++t) {
    cp.config.curriculum.tasks.push_back(
        {static_cast<int>(t), "t" + std::to_string(t), {static_cast<int>(2 * t), static_cast<int>(2 * t + 1)}});
  }
  cp.config.seed = rng.next_u64();
  cp.config.policy = static_cast<replay::BufferPolicy>(rng.uniform_index(3));
  cp.config.per_class_capacity = rng.uniform_index(10);
  cp.config.test_fraction = 0.05 + 0.9 * rng.uniform();
  const std::size_t dim = 1 + rng.uniform_index(8);
  cp.state.model = nn::init_model<float>(dim, 1 + rng.uniform_index(8), rng.uniform_index(3), 2 * tasks, rng.next_u64());
  cp.state.memory = replay::EpisodicMemory(cp.config.policy, cp.config.per_class_capacity, rng.next_u64());
  for (std::size_t i = 0, n = rng.uniform_index(60); i < n; ++i) {
    const int label = static_cast<int>(rng.uniform_index(2 * tasks));
    cp.state.memory.insert({EmbeddingVector(cvqa::testing::random_floats(rng, dim)), label, label / 2, 1.0});
  }
  cp.state.next_position = rng.uniform_index(tasks + 1);
  cp.state.matrix = eval::AccuracyMatrix(tasks);
  for (std::size_t i = 0; i < cp.state.next_position; ++i) {
    std::vector<double> row(tasks);
    for (double& a : row) a = 100.0 * rng.uniform();
    cp.state.matrix.append_row(row);
    cp.state.hyper_trace.push_back({static_cast<int>(i), rng.uniform(), rng.uniform(), 1, rng.uniform_index(99)});
  }
  return cp;
}

template <class T, class Write, class Read>
bool binary_round_trip(const T& value, Write write, Read read) {
  std::ostringstream out(std::ios::binary);
  write(value, out);
  const auto bytes = out.str();
  std::istringstream in(bytes, std::ios::binary);
  const T back = read(in);
  std::ostringstream again(std::ios::binary);
  write(back, again);
  return back == value && again.str() == bytes;
}

Outcome format_round_trips() {
  Rng rng(4001);
  int emb1 = 0, mlp1 = 0, run1 = 0, json = 0, csv = 0;
  for (int i = 0; i < kRoundTrips; ++i) {
    const std::size_t d_img = rng.uniform_index(20);
    const std::size_t d_txt = 1 + rng.uniform_index(20);
    std::vector<data::EmbeddingRecord> records;
    for (std::size_t k = 0, n = rng.uniform_index(30); k < n; ++k) records.push_back(random_record(rng, d_img, d_txt));
    std::ostringstream out(std::ios::binary);
    data::write_emb1(records, d_img, d_txt, out);
    std::istringstream in(out.str(), std::ios::binary);
    const auto back = data::read_emb1(in);
    emb1 += back.records == records && back.d_img == d_img && back.d_txt == d_txt ? 1 : 0;

    const auto model = nn::init_model<float>(1 + rng.uniform_index(20), 1 + rng.uniform_index(20),
                                             rng.uniform_index(4), 1 + rng.uniform_index(10), rng.next_u64());
    mlp1 += binary_round_trip(model, nn::write_mlp1, nn::read_mlp1) ? 1 : 0;

    const auto cp = random_checkpoint(rng);
    run1 += binary_round_trip(cp, train::write_run1, train::read_run1) ? 1 : 0;

    const auto report = random_report(rng);
    json += eval::parse_json(eval::render_json(report)) == report ? 1 : 0;
    csv += eval::parse_csv(eval::render_csv(report.matrix, report.task_ids)) == report.matrix ? 1 : 0;
  }
  const bool pass = emb1 == kRoundTrips && mlp1 == kRoundTrips && run1 == kRoundTrips && json == kRoundTrips &&
                    csv == kRoundTrips;
  return {pass, "lossless of " + std::to_string(kRoundTrips) + ": EMB1 " + std::to_string(emb1) + ", MLP1 " +
                    std::to_string(mlp1) + ", RUN1 " + std::to_string(run1) + ", report JSON " +
                    std::to_string(json) + ", report CSV " + std::to_string(csv)};
}

// ---------------------------------------------------------------- optional

Outcome floodnet_counts(const char* emb1, const char* prompts) {
  const auto dataset = data::load_dataset(emb1);
  const auto counts = data::validate_counts(dataset, data::floodnet_expected_counts());
  std::string detail = std::to_string(counts.train) + " train / " + std::to_string(counts.test) + " test";
  for (const auto& m : counts.mismatches) {
    detail += "; " + m.quantity + " expected " + std::to_string(m.expected) + " got " + std::to_string(m.actual);
  }
  if (prompts != nullptr) {
    const auto table = data::load_prompt_table(prompts);
    const auto zs = zeroshot::evaluate_zero_shot(dataset, table);
    detail += "; zero-shot overall " + fmt("%.2f", zs.overall);
  }
  return {counts.ok(), detail};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& check) {
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    failures += outcome.pass ? 0 : 1;
    std::printf("%s %s: %s\n", outcome.pass ? "PASS" : "FAIL", name, outcome.detail.c_str());
    std::fflush(stdout);
  };

  report("gradient-correctness", gradient_correctness);
  report("optimizer-sanity", optimizer_sanity);

  const auto synth = data::gen_synthetic(separable_spec());
  const auto prepared = train::prepare(synth.dataset, FusionMode::mul, 0.2, 0);
  report("joint-supervised", [&] { return joint_supervised(prepared, synth.dataset.manifest); });
  report("catastrophic-forgetting", [&] { return forgetting(prepared, synth.dataset.manifest); });

  report("buffer-statistics", buffer_statistics);
  report("permutation-sweep", permutation_sweep);
  report("format-round-trips", format_round_trips);

  if (const char* emb1 = std::getenv("CVQA_FLOODNET_EMB1"); emb1 != nullptr && *emb1 != '\0') {
    const char* prompts = std::getenv("CVQA_FLOODNET_PROMPTS");
    report("floodnet-counts", [&] { return floodnet_counts(emb1, prompts != nullptr && *prompts ? prompts : nullptr); });
  } else {
    std::printf("SKIP floodnet-counts: CVQA_FLOODNET_EMB1 not set\n");
  }

  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
