#pragma once

// Versioned binary container of named float64 matrices.
//
// Layout (little-endian):
//   char[4]  magic "NVMX"
//   u32      format version
//   u32      number of entries
//   per entry: u32 name length, name bytes, u64 rows, u64 cols,
//              rows*cols f64 values in row-major order
//
// Values are written as raw IEEE-754 bits, so a store/load round trip is
// bit-exact.

#include "nirvis/core.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace nirvis::io {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

inline constexpr char kMatrixMagic[4] = {'N', 'V', 'M', 'X'};
inline constexpr std::uint32_t kMatrixFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("unexpected end of file");
  return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::size_t max_len = 1 << 20) {
  const auto len = read_pod<std::uint32_t>(in);
  if (len > max_len) throw FormatError("string field too long");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw FormatError("unexpected end of file");
  return s;
}

using NamedMatrices = std::map<std::string, Matrix>;

inline void write_matrices(std::ostream& out, const NamedMatrices& entries) {
  out.write(kMatrixMagic, 4);
  write_pod(out, kMatrixFormatVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, m] : entries) {
    write_string(out, name);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) write_pod<double>(out, m(r, c));
  }
  if (!out) throw Error("failed writing matrix container");
}

inline NamedMatrices read_matrices(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMatrixMagic, 4) != 0) throw FormatError("not a matrix container (bad magic)");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kMatrixFormatVersion)
    throw FormatError("unsupported matrix container version " + std::to_string(version));
  const auto count = read_pod<std::uint32_t>(in);
  NamedMatrices entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = read_string(in);
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    if (rows > (1u << 24) || cols > (1u << 24)) throw FormatError("matrix dimensions out of range");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_pod<double>(in);
    entries.emplace(std::move(name), std::move(m));
  }
  return entries;
}

inline void save_matrices(const std::string& path, const NamedMatrices& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_matrices(out, entries);
}

inline NamedMatrices load_matrices(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_matrices(in);
}

inline const Matrix& require_entry(const NamedMatrices& entries, const std::string& name) {
  auto it = entries.find(name);
  if (it == entries.end()) throw FormatError("matrix container lacks entry '" + name + "'");
  return it->second;
}

}  // namespace nirvis::io
