#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cvqa {

enum class Errc {
  invalid_argument,
  dimension_mismatch,
  undefined_similarity,
  empty_input,
  non_finite,
  label_out_of_range,
  policy_mismatch,
  stale_cache,
  bad_magic,
  bad_version,
  truncated,
  corrupt,
  io_error,
  invalid_curriculum,
  numeric_failure,
};

std::string_view to_string(Errc code) noexcept;

/// Single exception type for the library. The code is stable and callers
/// (notably the CLI) switch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cvqa
