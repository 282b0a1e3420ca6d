#pragma once

// Little-endian primitive encoding shared by the EMB1, MLP1 and RUN1 formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

#include "cvqa/error.hpp"

namespace cvqa::detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  template <class U>
    requires std::is_unsigned_v<U>
  void put(U value) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
    }
    write_raw(bytes.data(), bytes.size());
  }

  void put_f32(float value) { put(std::bit_cast<std::uint32_t>(value)); }
  void put_f64(double value) { put(std::bit_cast<std::uint64_t>(value)); }

  void put_f32s(std::span<const float> values) {
    for (float v : values) put_f32(v);
  }

  void put_bytes(std::string_view bytes) { write_raw(bytes.data(), bytes.size()); }

  /// u64 length prefix followed by raw bytes.
  void put_blob(std::string_view bytes) {
    put(static_cast<std::uint64_t>(bytes.size()));
    put_bytes(bytes);
  }

 private:
  void write_raw(const char* data, std::size_t size) {
    out_.write(data, static_cast<std::streamsize>(size));
    if (!out_) throw Error(Errc::io_error, "write failed");
  }

  std::ostream& out_;
};

class LeReader {
 public:
  LeReader(std::istream& in, std::string context) : in_(in), context_(std::move(context)) {}

  template <class U>
    requires std::is_unsigned_v<U>
  U get() {
    std::array<unsigned char, sizeof(U)> bytes{};
    read_raw(reinterpret_cast<char*>(bytes.data()), bytes.size());
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
    }
    return value;
  }

  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  void get_f32s(std::span<float> values) {
    for (float& v : values) v = get_f32();
  }

  std::string get_bytes(std::size_t size) {
    std::string bytes(size, '\0');
    read_raw(bytes.data(), size);
    return bytes;
  }

  std::string get_blob(std::uint64_t max_size = std::uint64_t{1} << 34) {
    const auto size = get<std::uint64_t>();
    if (size > max_size) throw Error(Errc::corrupt, context_ + ": implausible block length");
    return get_bytes(static_cast<std::size_t>(size));
  }

  [[nodiscard]] const std::string& context() const { return context_; }

 private:
  void read_raw(char* data, std::size_t size) {
    in_.read(data, static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in_.gcount()) != size) {
      throw Error(Errc::truncated, context_ + ": unexpected end of data");
    }
  }

  std::istream& in_;
  std::string context_;
};

}  // namespace cvqa::detail
