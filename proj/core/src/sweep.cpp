#include "cvqa/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "cvqa/error.hpp"

namespace cvqa::train {

std::vector<std::vector<int>> all_orders(std::vector<int> ids) {
  std::sort(ids.begin(), ids.end());
  std::vector<std::vector<int>> out;
  do {
    out.push_back(ids);
  } while (std::next_permutation(ids.begin(), ids.end()));
  return out;
}

namespace {

std::string order_text(const std::vector<int>& order) {
  std::string out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(order[i]);
  }
  return out;
}

}  // namespace

SweepResult permutation_sweep(const data::Manifest& manifest, const PreparedData& data, const RunConfig& base,
                              const SweepOptions& options) {
  const auto base_order = base.curriculum.order();
  if (base_order.size() != 3 && !options.allow_any_task_count) {
    throw Error(Errc::invalid_curriculum, "a sweep needs exactly 3 tasks, got " + std::to_string(base_order.size()));
  }
  if (options.policies.empty()) throw Error(Errc::invalid_argument, "a sweep needs at least one policy");
  const auto orders = options.orders.empty() ? all_orders(base_order) : options.orders;

  SweepResult result;
  for (std::size_t o = 0; o < orders.size(); ++o) {
    for (std::size_t p = 0; p < options.policies.size(); ++p) {
      SweepEntry entry;
      entry.run_index = o * options.policies.size() + p;
      entry.order = orders[o];
      entry.policy = options.policies[p];
      entry.seed = derive_seed(options.master_seed, entry.run_index);
      result.entries.push_back(std::move(entry));
    }
  }

  auto config_for = [&](const SweepEntry& entry) {
    RunConfig config = base;
    auto curriculum = make_curriculum(manifest, entry.order);
    curriculum.first_task = base.curriculum.first_task;
    curriculum.later_tasks = base.curriculum.later_tasks;
    config.curriculum = std::move(curriculum);
    config.mode = TrainingMode::continual;
    config.policy = entry.policy;
    config.seed = entry.seed;
    return config;
  };
  // Validate every configuration up front so a bad order fails before any training.
  std::vector<RunConfig> configs;
  for (const auto& entry : result.entries) configs.push_back(config_for(entry));

  auto run_one = [&](std::size_t k) {
    auto report = train_continual(data, configs[k]).report;
    report.label = std::string(replay::to_string(result.entries[k].policy)) + "/order=" + order_text(result.entries[k].order);
    result.entries[k].report = std::move(report);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, result.entries.size()));
  if (workers == 1) {
    for (std::size_t k = 0; k < result.entries.size(); ++k) run_one(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < result.entries.size(); k = next++) {
          try {
            run_one(k);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::map<replay::BufferPolicy, std::pair<double, std::size_t>> sums;
  for (const auto& entry : result.entries) {
    auto& [sum, count] = sums[entry.policy];
    sum += entry.report.average;
    ++count;
  }
  for (auto policy : options.policies) {
    const auto& [sum, count] = sums[policy];
    if (std::none_of(result.ranking.begin(), result.ranking.end(),
                     [&](const PolicyRanking& r) { return r.policy == policy; })) {
      result.ranking.push_back({policy, sum / static_cast<double>(count), 0});
    }
  }
  std::stable_sort(result.ranking.begin(), result.ranking.end(), [](const PolicyRanking& a, const PolicyRanking& b) {
    return a.mean_average_accuracy > b.mean_average_accuracy;
  });
  for (std::size_t i = 0; i < result.ranking.size(); ++i) result.ranking[i].rank = i + 1;
  return result;
}

std::string render_sweep_table(const SweepResult& result) {
  std::string out = "order      policy      rank  average    overall    forgetting\n";
  char line[160];
  std::map<std::vector<int>, std::vector<const SweepEntry*>> by_order;
  std::vector<std::vector<int>> order_sequence;
  for (const auto& entry : result.entries) {
    if (!by_order.contains(entry.order)) order_sequence.push_back(entry.order);
    by_order[entry.order].push_back(&entry);
  }
  for (const auto& order : order_sequence) {
    auto group = by_order[order];
    std::stable_sort(group.begin(), group.end(), [](const SweepEntry* a, const SweepEntry* b) {
      return a->report.average > b->report.average;
    });
    for (std::size_t r = 0; r < group.size(); ++r) {
      const auto& rep = group[r]->report;
      const double forgetting = rep.forgetting ? rep.forgetting->mean : 0.0;
      std::snprintf(line, sizeof line, "%-10s %-11s %4zu  %9.4f  %9.4f  %10.4f\n", order_text(order).c_str(),
                    std::string(replay::to_string(group[r]->policy)).c_str(), r + 1, rep.average, rep.overall,
                    forgetting);
      out += line;
    }
  }
  out += "\npolicy      rank  mean_average\n";
  for (const auto& r : result.ranking) {
    std::snprintf(line, sizeof line, "%-11s %4zu  %12.6f\n", std::string(replay::to_string(r.policy)).c_str(), r.rank,
                  r.mean_average_accuracy);
    out += line;
  }
  return out;
}

}  // namespace cvqa::train
