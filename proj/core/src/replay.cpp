#include "cvqa/replay.hpp"

#include <numeric>
#include <string>

#include "cvqa/detail/binary_io.hpp"
#include "cvqa/error.hpp"

namespace cvqa::replay {

std::string_view to_string(BufferPolicy policy) noexcept {
  switch (policy) {
    case BufferPolicy::reservoir: return "reservoir";
    case BufferPolicy::ring: return "ring";
    case BufferPolicy::mean_of_features: return "mof";
  }
  return "?";
}

BufferPolicy parse_buffer_policy(std::string_view name) {
  if (name == "reservoir") return BufferPolicy::reservoir;
  if (name == "ring") return BufferPolicy::ring;
  if (name == "mof" || name == "mean-of-features") return BufferPolicy::mean_of_features;
  throw Error(Errc::invalid_argument, "unknown buffer policy '" + std::string(name) + "'");
}

EpisodicMemory::EpisodicMemory(BufferPolicy policy, std::size_t per_class_capacity,
                               std::uint64_t seed, ReservoirScope scope)
    : policy_(policy), scope_(scope), capacity_(per_class_capacity), rng_(seed) {}

void EpisodicMemory::require_policy(BufferPolicy expected) const {
  if (policy_ != expected) {
    throw Error(Errc::policy_mismatch, std::string(to_string(expected)) +
                                           " update on a " + std::string(to_string(policy_)) +
                                           " memory");
  }
}

void EpisodicMemory::check_feature(const MemorySlot& slot) {
  if (slot.feature.empty()) throw Error(Errc::invalid_argument, "memory slot without a feature");
  if (slot.label_id < 0) throw Error(Errc::label_out_of_range, "negative label id");
  if (feature_dim_ == 0) {
    feature_dim_ = slot.feature.dim();
  } else if (slot.feature.dim() != feature_dim_) {
    throw Error(Errc::dimension_mismatch, "feature dim changed from " +
                                              std::to_string(feature_dim_) + " to " +
                                              std::to_string(slot.feature.dim()));
  }
}

void EpisodicMemory::insert(MemorySlot slot) {
  switch (policy_) {
    case BufferPolicy::reservoir: reservoir_update(std::move(slot)); break;
    case BufferPolicy::ring: ring_update(std::move(slot)); break;
    case BufferPolicy::mean_of_features: mof_update(std::move(slot)); break;
  }
}

void EpisodicMemory::reservoir_update(MemorySlot slot) {
  require_policy(BufferPolicy::reservoir);
  check_feature(slot);
  if (scope_ == ReservoirScope::global) {
    global_reservoir_update(std::move(slot));
    return;
  }
  auto& buffer = classes_[slot.label_id];
  const std::uint64_t n = ++buffer.seen;
  ++operations_;
  if (buffer.slots.size() < capacity_) {
    buffer.slots.push_back(std::move(slot));
    ++operations_;
    return;
  }
  const std::size_t j = rng_.uniform_index(static_cast<std::size_t>(n));
  if (j < buffer.slots.size()) {
    buffer.slots[j] = std::move(slot);
    ++operations_;
  }
}

void EpisodicMemory::global_reservoir_update(MemorySlot slot) {
  auto& buffer = classes_[slot.label_id];
  ++buffer.seen;
  const std::uint64_t n = ++global_seen_;
  const std::size_t budget = capacity_ * classes_.size();
  ++operations_;
  if (global_slots_.size() < budget) {
    global_slots_.push_back(std::move(slot));
    ++operations_;
    return;
  }
  const std::size_t j = rng_.uniform_index(static_cast<std::size_t>(n));
  if (j < global_slots_.size()) {
    global_slots_[j] = std::move(slot);
    ++operations_;
  }
}

void EpisodicMemory::ring_update(MemorySlot slot) {
  require_policy(BufferPolicy::ring);
  check_feature(slot);
  auto& buffer = classes_[slot.label_id];
  ++buffer.seen;
  buffer.slots.push_back(std::move(slot));
  operations_ += 2;
  if (buffer.slots.size() > capacity_) {
    buffer.slots.pop_front();
    ++operations_;
  }
}

void EpisodicMemory::mof_update(MemorySlot slot) {
  require_policy(BufferPolicy::mean_of_features);
  check_feature(slot);
  auto& buffer = classes_[slot.label_id];
  const std::uint64_t n = ++buffer.seen;
  ++operations_;
  const auto values = slot.feature.values();
  if (buffer.running_mean.empty()) buffer.running_mean.assign(values.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < values.size(); ++i) {
    buffer.running_mean[i] += (static_cast<double>(values[i]) - buffer.running_mean[i]) * inv_n;
  }
  if (capacity_ == 0) return;

  std::vector<float> mean(buffer.running_mean.begin(), buffer.running_mean.end());
  MemorySlot mean_slot{EmbeddingVector(std::move(mean)), slot.label_id, slot.source_task,
                       static_cast<double>(n)};
  if (buffer.slots.empty()) {
    buffer.slots.push_back(std::move(mean_slot));
  } else {
    buffer.slots.front() = std::move(mean_slot);
  }
  ++operations_;
}

std::size_t EpisodicMemory::size() const noexcept {
  if (scope_ == ReservoirScope::global && policy_ == BufferPolicy::reservoir) {
    return global_slots_.size();
  }
  std::size_t total = 0;
  for (const auto& [id, buffer] : classes_) total += buffer.slots.size();
  return total;
}

std::vector<MemorySlot> EpisodicMemory::contents() const {
  if (scope_ == ReservoirScope::global && policy_ == BufferPolicy::reservoir) return global_slots_;
  std::vector<MemorySlot> out;
  out.reserve(size());
  for (const auto& [id, buffer] : classes_) out.insert(out.end(), buffer.slots.begin(), buffer.slots.end());
  return out;
}

std::vector<MemorySlot> EpisodicMemory::slots_of(int class_id) const {
  std::vector<MemorySlot> out;
  if (scope_ == ReservoirScope::global && policy_ == BufferPolicy::reservoir) {
    for (const auto& slot : global_slots_) {
      if (slot.label_id == class_id) out.push_back(slot);
    }
    return out;
  }
  if (auto it = classes_.find(class_id); it != classes_.end()) {
    out.assign(it->second.slots.begin(), it->second.slots.end());
  }
  return out;
}

std::vector<MemorySlot> EpisodicMemory::sample(std::size_t k, Rng& rng) const {
  std::vector<const MemorySlot*> pool;
  if (scope_ == ReservoirScope::global && policy_ == BufferPolicy::reservoir) {
    for (const auto& slot : global_slots_) pool.push_back(&slot);
  } else {
    for (const auto& [id, buffer] : classes_) {
      for (const auto& slot : buffer.slots) pool.push_back(&slot);
    }
  }
  std::vector<MemorySlot> out;
  if (k == 0 || pool.empty()) return out;

  if (policy_ == BufferPolicy::mean_of_features) {
    rng.shuffle(std::span(pool));
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(*pool[i % pool.size()]);
    return out;
  }

  const std::size_t take = std::min(k, pool.size());
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
    out.push_back(*pool[i]);
  }
  return out;
}

MemoryStats EpisodicMemory::stats() const {
  MemoryStats stats;
  std::map<int, std::size_t> global_counts;
  const bool global = scope_ == ReservoirScope::global && policy_ == BufferPolicy::reservoir;
  if (global) {
    for (const auto& slot : global_slots_) ++global_counts[slot.label_id];
  }
  for (const auto& [id, buffer] : classes_) {
    const std::size_t stored = global ? global_counts[id] : buffer.slots.size();
    stats.classes.push_back({id, stored, buffer.seen});
    stats.total_stored += stored;
    stats.total_seen += buffer.seen;
  }
  stats.total_capacity = capacity_ * classes_.size();
  if (stats.total_capacity > 0) {
    stats.utilization =
        static_cast<double>(stats.total_stored) / static_cast<double>(stats.total_capacity);
  }
  return stats;
}

bool operator==(const EpisodicMemory& a, const EpisodicMemory& b) {
  return a.policy_ == b.policy_ && a.scope_ == b.scope_ && a.capacity_ == b.capacity_ &&
         a.feature_dim_ == b.feature_dim_ && a.classes_ == b.classes_ &&
         a.global_slots_ == b.global_slots_ && a.global_seen_ == b.global_seen_ &&
         a.rng_ == b.rng_;
}

namespace {

void write_slot(detail::LeWriter& w, const MemorySlot& slot) {
  w.put(static_cast<std::uint32_t>(slot.label_id));
  w.put(static_cast<std::uint32_t>(slot.source_task));
  w.put_f64(slot.weight);
  w.put(static_cast<std::uint32_t>(slot.feature.dim()));
  w.put_f32s(slot.feature.values());
}

MemorySlot read_slot(detail::LeReader& r) {
  MemorySlot slot;
  slot.label_id = static_cast<int>(r.get<std::uint32_t>());
  slot.source_task = static_cast<int>(r.get<std::uint32_t>());
  slot.weight = r.get_f64();
  const auto dim = r.get<std::uint32_t>();
  if (dim == 0 || dim > (1u << 24)) throw Error(Errc::corrupt, "memory slot dim");
  std::vector<float> values(dim);
  r.get_f32s(values);
  slot.feature = EmbeddingVector(std::move(values));
  return slot;
}

}  // namespace

void EpisodicMemory::write(std::ostream& out) const {
  detail::LeWriter w(out);
  w.put(static_cast<std::uint8_t>(policy_));
  w.put(static_cast<std::uint8_t>(scope_));
  w.put(static_cast<std::uint64_t>(capacity_));
  w.put(static_cast<std::uint64_t>(feature_dim_));
  w.put_blob(rng_.state());
  w.put(global_seen_);
  w.put(operations_);
  w.put(static_cast<std::uint32_t>(classes_.size()));
  for (const auto& [id, buffer] : classes_) {
    w.put(static_cast<std::uint32_t>(id));
    w.put(buffer.seen);
    w.put(static_cast<std::uint64_t>(buffer.running_mean.size()));
    for (double m : buffer.running_mean) w.put_f64(m);
    w.put(static_cast<std::uint64_t>(buffer.slots.size()));
    for (const auto& slot : buffer.slots) write_slot(w, slot);
  }
  w.put(static_cast<std::uint64_t>(global_slots_.size()));
  for (const auto& slot : global_slots_) write_slot(w, slot);
}

EpisodicMemory EpisodicMemory::read(std::istream& in) {
  detail::LeReader r(in, "episodic memory");
  const auto policy = r.get<std::uint8_t>();
  const auto scope = r.get<std::uint8_t>();
  if (policy > 2 || scope > 1) throw Error(Errc::corrupt, "memory policy/scope tag");
  const auto capacity = r.get<std::uint64_t>();
  EpisodicMemory memory(static_cast<BufferPolicy>(policy), static_cast<std::size_t>(capacity), 0,
                        static_cast<ReservoirScope>(scope));
  memory.feature_dim_ = static_cast<std::size_t>(r.get<std::uint64_t>());
  memory.rng_ = Rng::from_state(r.get_blob(1u << 20));
  memory.global_seen_ = r.get<std::uint64_t>();
  memory.operations_ = r.get<std::uint64_t>();
  const auto class_count = r.get<std::uint32_t>();
  for (std::uint32_t c = 0; c < class_count; ++c) {
    const int id = static_cast<int>(r.get<std::uint32_t>());
    ClassBuffer buffer;
    buffer.seen = r.get<std::uint64_t>();
    const auto mean_size = r.get<std::uint64_t>();
    if (mean_size > (1u << 24)) throw Error(Errc::corrupt, "running mean size");
    buffer.running_mean.resize(static_cast<std::size_t>(mean_size));
    for (double& m : buffer.running_mean) m = r.get_f64();
    const auto slot_count = r.get<std::uint64_t>();
    if (slot_count > capacity + 1) throw Error(Errc::corrupt, "class slot count exceeds capacity");
    for (std::uint64_t s = 0; s < slot_count; ++s) buffer.slots.push_back(read_slot(r));
    memory.classes_.emplace(id, std::move(buffer));
  }
  const auto global_count = r.get<std::uint64_t>();
  if (global_count > capacity * (class_count + 1)) throw Error(Errc::corrupt, "global slot count");
  for (std::uint64_t s = 0; s < global_count; ++s) memory.global_slots_.push_back(read_slot(r));
  return memory;
}

}  // namespace cvqa::replay
