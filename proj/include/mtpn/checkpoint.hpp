#pragma once

// Checkpoint layout, little-endian throughout:
//   "MTPN" | u32 version | u32 n, config JSON (n bytes) | u32 tensor count |
//   per tensor: u32 n, name | u32 rank | rank x u32 dims | u8 dtype (0 = f32) | data

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "mtpn/io.hpp"
#include "mtpn/network.hpp"

namespace mtpn {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

namespace detail {
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void floats(std::span<const float> v) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
      bytes_.insert(bytes_.end(), p, p + v.size() * sizeof(float));
    } else {
      for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
    }
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }
  void reserve(std::size_t n) { bytes_.reserve(n); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : b_(bytes) {}

  std::size_t remaining() const { return b_.size() - pos_; }

  void need(std::size_t n, const std::string& tensor, const char* what) const {
    if (remaining() < n) throw CheckpointError(tensor, std::string("truncated while reading ") + what);
  }
  std::uint8_t u8(const std::string& tensor, const char* what) {
    need(1, tensor, what);
    return b_[pos_++];
  }
  std::uint32_t u32(const std::string& tensor, const char* what) {
    need(4, tensor, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(const std::string& tensor, const char* what) {
    const std::uint32_t n = u32(tensor, what);
    need(n, tensor, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(std::span<float> out, const std::string& tensor) {
    need(out.size() * 4, tensor, "tensor data");
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), b_.data() + pos_, out.size() * 4);
      pos_ += out.size() * 4;
    } else {
      for (float& f : out) f = std::bit_cast<float>(u32(tensor, "tensor data"));
    }
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};
}  // namespace detail

/// Tensors are written in name order, so equal models give equal bytes.
inline std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  detail::ByteWriter w;
  w.reserve(static_cast<std::size_t>(model.parameter_count()) * 4 + (1u << 16));
  for (char c : std::string_view("MTPN")) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.str(to_json(model.config).dump());
  w.u32(static_cast<std::uint32_t>(model.parameters.size()));
  for (const auto& [name, t] : model.parameters) {
    w.str(name);
    const Shape& s = t.shape();
    w.u32(4);
    for (std::int64_t d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
    w.u8(kDtypeF32);
    w.floats(t.data());
  }
  return w.take();
}

/// Rebuilds the model from the embedded config, then fills every declared
/// tensor by name. Any mismatch raises CheckpointError naming the tensor.
inline Model deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.need(4, "", "magic");
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8("", "magic"));
  if (std::string_view(magic, 4) != "MTPN") throw CheckpointError("", "bad magic (not an MTPN checkpoint)");
  const std::uint32_t version = r.u32("", "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("", "unsupported format version " + std::to_string(version));

  const std::string blob = r.str("", "config");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(json::parse(blob));
  } catch (const json::exception& e) {
    throw CheckpointError("", std::string("config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError("", std::string("invalid config: ") + e.what());
  }

  Model m;
  m.config = cfg;
  std::map<std::string, Shape> expected;
  for (const ParamDecl& d : declare_parameters(cfg)) expected.emplace(d.name, d.shape);

  const std::uint32_t count = r.u32("", "tensor count");
  if (count != expected.size())
    throw CheckpointError("", "holds " + std::to_string(count) + " tensors, config declares " +
                                  std::to_string(expected.size()));
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str("#" + std::to_string(k), "tensor name");
    auto it = expected.find(name);
    if (it == expected.end()) throw CheckpointError(name, "not a parameter of this architecture");
    if (m.parameters.contains(name)) throw CheckpointError(name, "appears twice");
    const std::uint32_t rank = r.u32(name, "rank");
    if (rank != 4) throw CheckpointError(name, "rank " + std::to_string(rank) + ", expected 4");
    std::int64_t dims[4];
    for (auto& d : dims) d = r.u32(name, "dims");
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    if (!(s == it->second)) throw CheckpointError(name, "dims " + s.str() + " do not match " + it->second.str());
    const std::uint8_t dtype = r.u8(name, "dtype");
    if (dtype != kDtypeF32) throw CheckpointError(name, "unknown dtype tag " + std::to_string(dtype));
    Tensor<float> t(s);
    r.floats(t.data(), name);
    m.parameters.emplace(name, std::move(t));
  }
  if (r.remaining() != 0) throw CheckpointError("", std::to_string(r.remaining()) + " trailing bytes after last tensor");
  m.trainable = m.learnable_names();
  return m;
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  atomic_write(path, serialize_checkpoint(model));
}

inline Model load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace mtpn
