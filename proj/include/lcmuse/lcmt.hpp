#pragma once

// LCMT tensor files: "LCMT", u16 version, u16 dtype (1 = f32, 2 = f64),
// u32 rank, u64 dims[rank], row-major payload. Everything little-endian.
// Several records may be concatenated in one stream.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "lcmuse/errors.hpp"
#include "lcmuse/tensor.hpp"

namespace lcmuse::lcmt {

inline constexpr std::array<char, 4> kMagic{'L', 'C', 'M', 'T'};
inline constexpr std::uint16_t kVersion = 1;

enum class DType : std::uint16_t { f32 = 1, f64 = 2 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "LCMT stores f32 or f64");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> b{};
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), b.size());
}

template <class U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> b{};
  is.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!is) throw ConfigError("lcmt: truncated header");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

template <class F>
void put_float(std::ostream& os, F v) {
  using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  put_le<Bits>(os, std::bit_cast<Bits>(v));
}

template <class F>
F get_float(std::istream& is) {
  using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  return std::bit_cast<F>(get_le<Bits>(is));
}

}  // namespace detail

template <class T>
void write(std::ostream& os, const Tensor<T>& t) {
  os.write(kMagic.data(), kMagic.size());
  detail::put_le<std::uint16_t>(os, kVersion);
  detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(dtype_of<T>()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) detail::put_le<std::uint64_t>(os, d);
  for (auto v : t.values()) detail::put_float(os, v);
  if (!os) throw ConfigError("lcmt: write failed");
}

/// Reads one record, converting the payload to T.
template <class T>
Tensor<T> read(std::istream& is, DType* stored = nullptr) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw ConfigError("lcmt: bad magic");
  const auto version = detail::get_le<std::uint16_t>(is);
  if (version != kVersion) throw ConfigError("lcmt: unsupported version " + std::to_string(version));
  const auto code = detail::get_le<std::uint16_t>(is);
  if (code != 1 && code != 2) throw ConfigError("lcmt: unknown dtype code " + std::to_string(code));
  const auto rank = detail::get_le<std::uint32_t>(is);
  if (rank == 0 || rank > 16) throw ConfigError("lcmt: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(is));
  Tensor<T> out(shape);
  for (auto& v : out.values()) {
    v = code == 1 ? static_cast<T>(detail::get_float<float>(is)) : static_cast<T>(detail::get_float<double>(is));
  }
  if (stored) *stored = static_cast<DType>(code);
  return out;
}

template <class T>
void save(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("lcmt: cannot open " + path.string() + " for writing");
  write(os, t);
}

template <class T>
Tensor<T> load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("lcmt: cannot open " + path.string());
  return read<T>(is);
}

}  // namespace lcmuse::lcmt
