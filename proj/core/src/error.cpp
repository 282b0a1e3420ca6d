#include "cvqa/error.hpp"

namespace cvqa {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid argument";
    case Errc::dimension_mismatch: return "dimension mismatch";
    case Errc::undefined_similarity: return "undefined similarity";
    case Errc::empty_input: return "empty input";
    case Errc::non_finite: return "non-finite value";
    case Errc::label_out_of_range: return "label out of range";
    case Errc::policy_mismatch: return "policy mismatch";
    case Errc::stale_cache: return "stale forward cache";
    case Errc::bad_magic: return "bad magic";
    case Errc::bad_version: return "unsupported version";
    case Errc::truncated: return "truncated file";
    case Errc::corrupt: return "corrupt file";
    case Errc::io_error: return "i/o error";
    case Errc::invalid_curriculum: return "invalid curriculum";
    case Errc::numeric_failure: return "numeric failure";
  }
  return "unknown error";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace cvqa
