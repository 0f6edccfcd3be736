#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2s2/errors.hpp"
#include "s2s2/segnet.hpp"

// Checkpoint layout, all integers little-endian:
//   "S2S2" | u16 version | u32 config length | config JSON
//   then per tensor: u32 name length | name | u32 rank | rank x u32 dims | numel x f32

namespace s2s2 {

inline constexpr std::array<char, 4> kCheckpointMagic{'S', '2', 'S', '2'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes_[pos_]) |
                                              (static_cast<unsigned char>(bytes_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw CorruptArtifact(std::string("checkpoint truncated while reading ") + what);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline nlohmann::json net_config_json(const NetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"base_channels", c.base_channels},
          {"depth", c.depth},
          {"num_classes", c.num_classes}};
}

/// Serializes parameters (as 32-bit reals) with the net config, init seed
/// and an optional caller-supplied `meta` object in the config block.
template <class T>
std::string encode_checkpoint(const NetParams<T>& params, const nlohmann::json& meta = nlohmann::json::object()) {
  const nlohmann::json config = {
      {"net", net_config_json(params.config)}, {"init_seed", params.init_seed}, {"meta", meta}};
  const std::string config_text = config.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u16(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(config_text.size()));
  out += config_text;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& name = params.names[i];
    const auto& t = params.tensors[i];
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (const auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (const T v : t.data()) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

struct LoadedCheckpoint {
  NetParams<float> params;
  nlohmann::json meta;
};

inline LoadedCheckpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) {
    throw CorruptArtifact("checkpoint: bad magic (expected \"S2S2\")");
  }
  detail::ByteReader r(bytes);
  r.bytes(4, "magic");
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) throw CorruptArtifact("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t config_len = r.u32("config length");
  nlohmann::json config;
  try {
    config = nlohmann::json::parse(r.bytes(config_len, "config"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArtifact(std::string("checkpoint: config block is not JSON: ") + e.what());
  }

  LoadedCheckpoint out;
  try {
    const auto& n = config.at("net");
    out.params.config = NetConfig{n.at("in_channels").get<int>(), n.at("base_channels").get<int>(),
                                  n.at("depth").get<int>(), n.at("num_classes").get<int>()};
    out.params.init_seed = config.at("init_seed").get<std::uint64_t>();
    out.meta = config.value("meta", nlohmann::json::object());
    out.params.config.validate();
  } catch (const std::exception& e) {
    throw CorruptArtifact(std::string("checkpoint: invalid config block: ") + e.what());
  }

  while (!r.at_end()) {
    const std::uint32_t name_len = r.u32("name length");
    std::string name = r.bytes(name_len, "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw CorruptArtifact("checkpoint: implausible rank for " + name);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("dims"));
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = r.f32("tensor data");
    try {
      out.params.tensors.emplace_back(shape, std::move(data), true);
    } catch (const std::exception& e) {
      throw CorruptArtifact("checkpoint: tensor " + name + ": " + e.what());
    }
    out.params.names.push_back(std::move(name));
  }

  // The record list must match the architecture named in the config.
  const auto reference = init_params<float>(out.params.config, 0);
  if (reference.names != out.params.names) throw CorruptArtifact("checkpoint: tensor list does not match net config");
  for (std::size_t i = 0; i < reference.tensors.size(); ++i) {
    if (reference.tensors[i].shape() != out.params.tensors[i].shape()) {
      throw CorruptArtifact("checkpoint: shape mismatch for " + out.params.names[i]);
    }
  }
  return out;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const NetParams<T>& params,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  write_file_bytes(path, encode_checkpoint(params, meta));
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace s2s2
