#pragma once

// Checkpoint format (all integers little-endian):
//   "GMLFCKPT" | u32 version | u64 config hash | u32 record count
//   per record: u32 name length | name bytes | u32 rank | u32 dims... | f64 values...

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "gmlf/nn/params.hpp"

namespace gmlf {

constexpr char kCheckpointMagic[8] = {'G', 'M', 'L', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::vector<CheckpointRecord> records;
};

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw std::runtime_error("checkpoint is truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, ck.version);
  detail::put_le<std::uint64_t>(out, ck.config_hash);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.records.size()));
  for (const auto& r : ck.records) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (int d : r.shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    if (r.values.size() != shape_numel(r.shape)) {
      throw std::invalid_argument("checkpoint record '" + r.name + "' has values that do not fill its shape");
    }
    for (double v : r.values) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view in) {
  if (in.size() < sizeof(kCheckpointMagic) || std::memcmp(in.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file (bad magic)");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  Checkpoint ck;
  ck.version = detail::get_le<std::uint32_t>(in, pos);
  if (ck.version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.config_hash = detail::get_le<std::uint64_t>(in, pos);
  const auto count = detail::get_le<std::uint32_t>(in, pos);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto len = detail::get_le<std::uint32_t>(in, pos);
    if (pos + len > in.size()) throw std::runtime_error("checkpoint is truncated");
    r.name.assign(in.substr(pos, len));
    pos += len;
    const auto rank = detail::get_le<std::uint32_t>(in, pos);
    if (rank > 8) throw std::runtime_error("checkpoint record '" + r.name + "' has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(static_cast<int>(detail::get_le<std::uint32_t>(in, pos)));
    check_shape(r.shape);
    const std::size_t n = shape_numel(r.shape);
    if (pos + n * 8 > in.size()) throw std::runtime_error("checkpoint is truncated");
    r.values.resize(n);
    for (auto& v : r.values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(in, pos));
    ck.records.push_back(std::move(r));
  }
  if (pos != in.size()) throw std::runtime_error("checkpoint has trailing bytes");
  return ck;
}

template <typename T>
Checkpoint make_checkpoint(const ParamList<T>& params, std::uint64_t config_hash) {
  Checkpoint ck;
  ck.config_hash = config_hash;
  for (const auto& p : params) {
    const auto v = p.tensor.values();
    ck.records.push_back({p.name, p.tensor.shape(), std::vector<double>(v.begin(), v.end())});
  }
  return ck;
}

/// Copies checkpoint values into `params` (names, order and shapes must match).
template <typename T>
void apply_checkpoint(const Checkpoint& ck, ParamList<T>& params, std::uint64_t expected_hash) {
  if (ck.config_hash != expected_hash) {
    throw std::runtime_error("checkpoint was written for a different model configuration");
  }
  if (ck.records.size() != params.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(ck.records.size()) + " tensors, model has " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& r = ck.records[i];
    auto& p = params[i];
    if (r.name != p.name || r.shape != p.tensor.shape()) {
      throw std::runtime_error("checkpoint tensor '" + r.name + "' " + shape_str(r.shape) + " does not match model '" +
                               p.name + "' " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(r.values[j]);
  }
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace gmlf
