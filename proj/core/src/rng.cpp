#include "cvqa/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "cvqa/error.hpp"

namespace cvqa {

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw Error(Errc::invalid_argument, "uniform_index(0)");
  const auto bound = static_cast<std::uint64_t>(n);
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw = engine_();
  while (draw >= limit) draw = engine_();
  return static_cast<std::size_t>(draw % bound);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

Rng Rng::from_state(std::string_view state) {
  Rng rng;
  std::istringstream in{std::string(state)};
  in >> rng.engine_;
  if (!in) throw Error(Errc::corrupt, "unreadable generator state");
  return rng;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace cvqa
