#pragma once

#include <filesystem>
#include <iosfwd>

#include "cvqa/curriculum.hpp"

namespace cvqa::train {

/// Everything needed to continue a continual run at the next task boundary.
struct RunCheckpoint {
  RunConfig config;
  StreamState state;

  friend bool operator==(const RunCheckpoint&, const RunCheckpoint&) = default;
};

inline constexpr std::uint32_t kRun1Version = 1;

/// "RUN1", u32 version, then length-prefixed blocks: config JSON, MLP1 model,
/// memory, followed by the next position, the accuracy rows and the
/// hyperparameter trace. Integers little-endian, floats IEEE bit patterns.
void write_run1(const RunCheckpoint& checkpoint, std::ostream& out);
RunCheckpoint read_run1(std::istream& in);
void save_run1(const RunCheckpoint& checkpoint, const std::filesystem::path& path);
RunCheckpoint load_run1(const std::filesystem::path& path);

}  // namespace cvqa::train
