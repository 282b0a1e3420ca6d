#include "cvqa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cvqa/error.hpp"
#include "cvqa/rng.hpp"

namespace cvqa::data {

namespace {

constexpr std::size_t kPlacementAttempts = 10000;

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sum);
}

std::vector<double> unit_direction(std::size_t dim, Rng& rng) {
  std::vector<double> u(dim);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& x : u) x = rng.normal();
    norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
  }
  for (double& x : u) x /= norm;
  return u;
}

EmbeddingVector to_embedding(const std::vector<double>& v) {
  return EmbeddingVector(std::vector<float>(v.begin(), v.end()));
}

}  // namespace

void SyntheticSpec::validate() const {
  if (tasks == 0 || classes_per_task == 0 || dim_img == 0 || dim_txt == 0 || train_per_class == 0 ||
      test_per_class == 0) {
    throw Error(Errc::invalid_argument, "synthetic spec counts and dims must be >= 1");
  }
  if (!(cluster_separation > 0.0) || !std::isfinite(cluster_separation)) {
    throw Error(Errc::invalid_argument, "cluster_separation must be > 0");
  }
  if (!(drift >= 0.0) || !(text_noise >= 0.0)) {
    throw Error(Errc::invalid_argument, "drift and text_noise must be >= 0");
  }
  if (tasks * classes_per_task > 0xffff || tasks > 0xffff) {
    throw Error(Errc::invalid_argument, "too many labels for u16 ids");
  }
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n_classes = spec.tasks * spec.classes_per_task;
  const double sigma = 1.0;
  const double min_gap = spec.cluster_separation * sigma;

  // Rejection-sample class means inside [-gap, gap]^d so that the spread of
  // the means scales with the requested separation.
  std::vector<std::vector<double>> means;
  for (std::size_t c = 0; c < n_classes; ++c) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      std::vector<double> candidate(spec.dim_img);
      for (double& x : candidate) x = (2.0 * rng.uniform() - 1.0) * min_gap;
      placed = std::all_of(means.begin(), means.end(),
                           [&](const auto& m) { return distance(m, candidate) >= min_gap; });
      if (placed) means.push_back(std::move(candidate));
    }
    if (!placed) {
      throw Error(Errc::invalid_argument,
                  "cannot place " + std::to_string(n_classes) + " class means " +
                      std::to_string(spec.cluster_separation) + " sigma apart in dim " +
                      std::to_string(spec.dim_img));
    }
  }
  std::vector<std::vector<double>> drift_dirs;
  for (std::size_t c = 0; c < n_classes; ++c) drift_dirs.push_back(unit_direction(spec.dim_img, rng));
  std::vector<std::vector<double>> text_means;
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    std::vector<double> m(spec.dim_txt);
    for (double& x : m) x = 0.5 + rng.uniform();
    text_means.push_back(std::move(m));
  }

  SyntheticData out;
  auto& manifest = out.dataset.manifest;
  manifest.dataset_name = "synthetic";
  manifest.d_img = spec.dim_img;
  manifest.d_txt = spec.dim_txt;
  manifest.provenance["generator"] = "cvqa gen_synthetic";
  manifest.provenance["seed"] = std::to_string(spec.seed);
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    TaskDescriptor task;
    task.task_id = static_cast<int>(t);
    task.name = "task" + std::to_string(t);
    task.prompt_template = "{label}";
    for (std::size_t k = 0; k < spec.classes_per_task; ++k) {
      const auto label = static_cast<int>(t * spec.classes_per_task + k);
      task.label_ids.push_back(label);
      manifest.label_names.push_back("t" + std::to_string(t) + "c" + std::to_string(k));
    }
    manifest.tasks.push_back(std::move(task));
  }

  auto make_record = [&](std::size_t task, std::size_t label, double position) {
    std::vector<double> img(spec.dim_img);
    for (std::size_t i = 0; i < spec.dim_img; ++i) {
      img[i] = means[label][i] + spec.drift * sigma * position * drift_dirs[label][i] +
               sigma * rng.normal();
    }
    std::vector<double> txt(spec.dim_txt);
    for (std::size_t i = 0; i < spec.dim_txt; ++i) {
      txt[i] = text_means[task][i] + spec.text_noise * rng.normal();
    }
    EmbeddingRecord record;
    record.task_id = static_cast<std::uint16_t>(task);
    record.label_id = static_cast<std::uint16_t>(label);
    record.image_embedding = to_embedding(img);
    record.text_embedding = to_embedding(txt);
    return record;
  };

  auto& records = out.dataset.records;
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    // Arrival order: each class's k-th item arrives at time (k + U)/n, which
    // interleaves classes while keeping every class's drift monotone.
    struct Arrival {
      double time;
      std::size_t label;
      std::size_t rank;
    };
    std::vector<Arrival> arrivals;
    const auto n = static_cast<double>(spec.train_per_class);
    for (std::size_t k = 0; k < spec.classes_per_task; ++k) {
      for (std::size_t r = 0; r < spec.train_per_class; ++r) {
        arrivals.push_back({(static_cast<double>(r) + rng.uniform()) / n,
                            t * spec.classes_per_task + k, r});
      }
    }
    std::stable_sort(arrivals.begin(), arrivals.end(),
                     [](const Arrival& a, const Arrival& b) { return a.time < b.time; });
    for (const auto& a : arrivals) {
      const double position =
          spec.train_per_class > 1 ? static_cast<double>(a.rank) / (n - 1.0) - 0.5 : 0.0;
      auto record = make_record(t, a.label, position);
      record.record_id = records.size();
      manifest.split[record.record_id] = Split::train;
      records.push_back(std::move(record));
    }
  }
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    for (std::size_t k = 0; k < spec.classes_per_task; ++k) {
      for (std::size_t r = 0; r < spec.test_per_class; ++r) {
        auto record = make_record(t, t * spec.classes_per_task + k, rng.uniform() - 0.5);
        record.record_id = records.size();
        manifest.split[record.record_id] = Split::test;
        records.push_back(std::move(record));
      }
    }
  }

  for (const auto& task : manifest.tasks) {
    std::vector<LabelPrompt> entries;
    for (int label : task.label_ids) {
      entries.push_back({label, to_embedding(means[static_cast<std::size_t>(label)])});
    }
    out.prompts.emplace_back(task.task_id, std::move(entries));
  }
  for (const auto& m : means) out.class_means.emplace_back(m.begin(), m.end());
  return out;
}

ExpectedCounts expected_counts(const SyntheticSpec& spec) {
  ExpectedCounts e;
  e.name = "synthetic";
  const std::size_t per_task_train = spec.classes_per_task * spec.train_per_class;
  const std::size_t per_task_test = spec.classes_per_task * spec.test_per_class;
  e.train = spec.tasks * per_task_train;
  e.test = spec.tasks * per_task_test;
  e.total = *e.train + *e.test;
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    e.train_per_task[static_cast<int>(t)] = per_task_train;
    e.test_per_task[static_cast<int>(t)] = per_task_test;
  }
  return e;
}

}  // namespace cvqa::data
