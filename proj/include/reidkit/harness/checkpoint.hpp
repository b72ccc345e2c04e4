#pragma once

// Checkpoint file: "RKCK", u32 version, string fingerprint, string config
// (resolved YAML), i32 epoch, i64 step, u32 count, then per tensor: string
// name, u32 ndim, ndim x u32 dims, f64 values. Strings are u32 length +
// bytes; everything little-endian.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "reidkit/error.hpp"
#include "reidkit/harness/config.hpp"

namespace reidkit::harness {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Hash of everything that determines the model's parameter shapes.
inline std::string model_fingerprint(const nn::ModelConfig& m) {
  std::ostringstream os;
  os << "K=" << m.K << ";in=" << m.backbone.input_height << "x" << m.backbone.input_width << ";widths=";
  for (int w : m.backbone.widths) os << w << ",";
  os << ";strides=";
  for (int s : m.backbone.strides) os << s << ",";
  return fnv1a_hex(os.str());
}

struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string fingerprint;
  std::string config_yaml;
  int epoch = 0;          // epochs completed
  std::int64_t step = 0;  // optimizer steps completed
  std::map<std::string, Tensor> tensors;

  RunConfig config() const { return parse_config_string(config_yaml); }
};

namespace detail {

template <class V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
template <class V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(static_cast<bool>(is), ErrorCode::kIo, "truncated checkpoint");
  return v;
}
inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  require(n < (1u << 28), ErrorCode::kIo, "corrupt checkpoint string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  require(static_cast<bool>(is), ErrorCode::kIo, "truncated checkpoint");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    require(static_cast<bool>(os), ErrorCode::kIo, "cannot write " + tmp);
    os.write("RKCK", 4);
    detail::put<std::uint32_t>(os, kCheckpointVersion);
    detail::put_string(os, ck.fingerprint);
    detail::put_string(os, ck.config_yaml);
    detail::put<std::int32_t>(os, ck.epoch);
    detail::put<std::int64_t>(os, ck.step);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
      detail::put_string(os, name);
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
      for (int d : t.shape) detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
      os.write(reinterpret_cast<const char*>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
    require(static_cast<bool>(os), ErrorCode::kIo, "failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open checkpoint " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  require(is && std::memcmp(magic, "RKCK", 4) == 0, ErrorCode::kIo, path.string() + " is not a checkpoint");
  const auto version = detail::get<std::uint32_t>(is);
  require(version == kCheckpointVersion, ErrorCode::kIo, "unsupported checkpoint version");
  Checkpoint ck;
  ck.fingerprint = detail::get_string(is);
  ck.config_yaml = detail::get_string(is);
  ck.epoch = detail::get<std::int32_t>(is);
  ck.step = detail::get<std::int64_t>(is);
  const auto count = detail::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = detail::get_string(is);
    Tensor t;
    const auto ndim = detail::get<std::uint32_t>(is);
    require(ndim <= 8, ErrorCode::kIo, "corrupt tensor rank in checkpoint");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(static_cast<int>(detail::get<std::uint32_t>(is)));
      n *= static_cast<std::size_t>(t.shape.back());
    }
    require(n < (1u << 28), ErrorCode::kIo, "corrupt tensor size in checkpoint");
    t.values.resize(n);
    is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    require(static_cast<bool>(is), ErrorCode::kIo, "truncated checkpoint");
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

/// Copies a vector into the checkpoint under `key`.
template <class T>
void store(Checkpoint& ck, const std::string& key, const std::vector<int>& shape, const nn::Vec<T>& v) {
  Tensor t{shape, std::vector<double>(static_cast<std::size_t>(v.size()))};
  for (Eigen::Index i = 0; i < v.size(); ++i) t.values[static_cast<std::size_t>(i)] = static_cast<double>(v[i]);
  ck.tensors[key] = std::move(t);
}

template <class T>
void restore(const Checkpoint& ck, const std::string& key, const std::vector<int>& shape, nn::Vec<T>& v) {
  auto it = ck.tensors.find(key);
  require(it != ck.tensors.end(), ErrorCode::kShape, "checkpoint lacks tensor '" + key + "'");
  require(it->second.shape == shape && static_cast<Eigen::Index>(it->second.values.size()) == v.size(),
          ErrorCode::kShape, "checkpoint tensor '" + key + "' has the wrong shape");
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(it->second.values[static_cast<std::size_t>(i)]);
}

/// Compares a checkpoint against the model a configuration would build.
inline void check_fingerprint(const Checkpoint& ck, const RunConfig& cfg) {
  const auto expect = model_fingerprint(cfg.model);
  require(ck.fingerprint == expect, ErrorCode::kFingerprint,
          "checkpoint fingerprint " + ck.fingerprint + " does not match config fingerprint " + expect);
}

}  // namespace reidkit::harness
