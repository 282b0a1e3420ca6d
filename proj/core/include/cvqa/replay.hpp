#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <string_view>
#include <vector>

#include "cvqa/embedding.hpp"
#include "cvqa/rng.hpp"

namespace cvqa::replay {

enum class BufferPolicy { reservoir, ring, mean_of_features };

std::string_view to_string(BufferPolicy policy) noexcept;
BufferPolicy parse_buffer_policy(std::string_view name);

/// Per-class reservoirs (default) or a single reservoir whose budget is
/// per_class_capacity times the number of classes observed so far.
enum class ReservoirScope { per_class, global };

struct MemorySlot {
  EmbeddingVector feature;  // fused feature
  int label_id = 0;
  int source_task = 0;
  double weight = 1.0;  // running count for mean-of-features slots

  friend bool operator==(const MemorySlot&, const MemorySlot&) = default;
};

struct ClassStats {
  int class_id = 0;
  std::size_t stored = 0;
  std::uint64_t seen = 0;
};

struct MemoryStats {
  std::vector<ClassStats> classes;  // ascending class id
  std::size_t total_stored = 0;
  std::uint64_t total_seen = 0;
  std::size_t total_capacity = 0;  // per_class_capacity x classes observed
  double utilization = 0.0;        // total_stored / total_capacity, 0 when capacity is 0
};

/// Bounded per-class replay store. One writer at a time; sample() is const
/// and may run on a snapshot.
class EpisodicMemory {
 public:
  EpisodicMemory(BufferPolicy policy, std::size_t per_class_capacity, std::uint64_t seed,
                 ReservoirScope scope = ReservoirScope::per_class);

  /// Routes to the update matching policy().
  void insert(MemorySlot slot);

  /// Algorithm R within the slot's class: with n items seen so far and
  /// capacity M, a full class keeps the newcomer with probability M/n in a
  /// uniformly chosen slot.
  void reservoir_update(MemorySlot slot);
  /// Per-class FIFO; the oldest slot of the class is evicted on overflow.
  void ring_update(MemorySlot slot);
  /// One slot per class holding the running mean of every feature seen.
  void mof_update(MemorySlot slot);

  /// min(k, size()) distinct slots drawn uniformly across classes. For
  /// mean-of-features the class means are cycled until k slots are returned.
  [[nodiscard]] std::vector<MemorySlot> sample(std::size_t k, Rng& rng) const;

  [[nodiscard]] MemoryStats stats() const;
  /// Stored slots in ascending class order, FIFO order within a class.
  [[nodiscard]] std::vector<MemorySlot> contents() const;
  [[nodiscard]] std::vector<MemorySlot> slots_of(int class_id) const;
  [[nodiscard]] std::size_t size() const noexcept;
  [[nodiscard]] bool empty() const noexcept { return size() == 0; }

  [[nodiscard]] BufferPolicy policy() const noexcept { return policy_; }
  [[nodiscard]] ReservoirScope scope() const noexcept { return scope_; }
  [[nodiscard]] std::size_t per_class_capacity() const noexcept { return capacity_; }
  [[nodiscard]] std::size_t feature_dim() const noexcept { return feature_dim_; }

  /// Slot reads/writes performed by updates; lets tests bound per-insert work.
  [[nodiscard]] std::uint64_t operation_count() const noexcept { return operations_; }

  void write(std::ostream& out) const;
  static EpisodicMemory read(std::istream& in);

  friend bool operator==(const EpisodicMemory& a, const EpisodicMemory& b);

 private:
  struct ClassBuffer {
    std::deque<MemorySlot> slots;
    std::uint64_t seen = 0;
    std::vector<double> running_mean;

    friend bool operator==(const ClassBuffer&, const ClassBuffer&) = default;
  };

  void require_policy(BufferPolicy expected) const;
  void check_feature(const MemorySlot& slot);
  void global_reservoir_update(MemorySlot slot);

  BufferPolicy policy_;
  ReservoirScope scope_;
  std::size_t capacity_;
  std::size_t feature_dim_ = 0;
  std::map<int, ClassBuffer> classes_;
  std::vector<MemorySlot> global_slots_;
  std::uint64_t global_seen_ = 0;
  std::uint64_t operations_ = 0;
  Rng rng_;
};

}  // namespace cvqa::replay
