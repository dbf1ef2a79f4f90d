#pragma once

// Weight files: "CPSP", u32 version, u32 count, then per parameter
// u32 name length, name bytes, u32 rank, u32 dims, float64 payload.
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpose/parameters.hpp"

namespace cpose {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One or more parameters in a file disagree in shape with the network.
class ParameterShapeMismatch : public CheckpointError {
 public:
  explicit ParameterShapeMismatch(std::vector<std::string> names)
      : CheckpointError(message(names)), parameters(std::move(names)) {}
  std::vector<std::string> parameters;

 private:
  static std::string message(const std::vector<std::string>& names) {
    std::string s = "shape mismatch for parameters:";
    for (const auto& n : names) s += " " + n;
    return s;
  }
};

namespace binio {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  return lo | static_cast<std::uint64_t>(get_u32(is)) << 32;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline std::string get_string(std::istream& is, std::uint32_t max_len = 1u << 20) {
  const std::uint32_t n = get_u32(is);
  if (n > max_len) throw CheckpointError("string length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw CheckpointError("unexpected end of file");
  return s;
}

template <typename T>
void put_tensor(std::ostream& os, const Tensor<T>& t) {
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (T v : t.data()) put_f64(os, static_cast<double>(v));
}

template <typename T>
Tensor<T> get_tensor(std::istream& is) {
  const std::uint32_t rank = get_u32(is);
  if (rank > 8) throw CheckpointError("tensor rank " + std::to_string(rank) + " is implausible");
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = get_u32(is);
    if (d == 0) throw CheckpointError("tensor has a zero dimension");
    n *= d;
    if (n > (std::size_t{1} << 32)) throw CheckpointError("tensor size is implausible");
  }
  AlignedVector<T> data(n);
  for (auto& v : data) v = static_cast<T>(get_f64(is));
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace binio

inline constexpr char kWeightsMagic[4] = {'C', 'P', 'S', 'P'};
inline constexpr std::uint32_t kWeightsVersion = 1;

template <typename T>
void write_weights(std::ostream& os, const ParameterStore<T>& params) {
  os.write(kWeightsMagic, 4);
  binio::put_u32(os, kWeightsVersion);
  binio::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params.entries()) {
    binio::put_string(os, p.name);
    binio::put_tensor(os, p.value);
  }
}

/// Named tensors of a weight stream, in file order.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> read_weights(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw CheckpointError("not a weight file (bad magic)");
  }
  const std::uint32_t version = binio::get_u32(is);
  if (version != kWeightsVersion) {
    throw CheckpointError("unsupported weight file version " + std::to_string(version));
  }
  const std::uint32_t count = binio::get_u32(is);
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = binio::get_string(is);
    out.emplace_back(std::move(name), binio::get_tensor<T>(is));
  }
  return out;
}

template <typename T>
void save_weights(const ParameterStore<T>& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_weights(os, params);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

struct LoadReport {
  std::vector<std::string> loaded;
  /// Network parameters absent from the file; they keep their values.
  std::vector<std::string> not_in_file;
  /// File entries with no matching network parameter.
  std::vector<std::string> unused;
};

/// Name-matched load. Shapes are checked for every matched parameter before
/// anything is overwritten.
template <typename T>
LoadReport load_weights(ParameterStore<T>& params, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open weight file " + path.string());
  auto entries = read_weights<T>(is);
  LoadReport report;
  std::vector<std::string> mismatched;
  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& [name, t] : entries) {
    if (!params.contains(name)) {
      report.unused.push_back(name);
      continue;
    }
    if (params.at(name).value.shape() != t.shape()) mismatched.push_back(name);
    by_name[name] = &t;
  }
  if (!mismatched.empty()) throw ParameterShapeMismatch(mismatched);
  for (auto& p : params.entries()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      report.not_in_file.push_back(p.name);
    } else {
      p.value = *it->second;
      report.loaded.push_back(p.name);
    }
  }
  return report;
}

}  // namespace cpose
