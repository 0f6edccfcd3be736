#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2s2/checkpoint.hpp"
#include "s2s2/config.hpp"
#include "s2s2/errors.hpp"
#include "s2s2/synthgen.hpp"

// On-disk dataset:
//   masks/<id>.pgm       binary graymap (P5, maxval 255), one byte per label
//   stacks/<id>/<k>.f32  H*W little-endian float32, row-major
//   meta.json            config echo, rng algorithm, split id lists, seeds
// Test samples are single-image stacks (stacks/<id>/0.f32).

namespace s2s2 {

namespace fs = std::filesystem;

inline constexpr int kDatasetFormatVersion = 1;

inline std::string encode_pgm(const SegmentationMask& m) {
  std::string out = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(m.labels.data()), m.labels.size());
  return out;
}

inline SegmentationMask decode_pgm(const std::string& bytes, int num_classes, const std::string& what) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  auto number = [&](const char* field) {
    const std::string t = token();
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos || t.size() > 6)
      throw CorruptArtifact(what + ": bad PGM " + field);
    return static_cast<std::size_t>(std::stoul(t));
  };
  if (token() != "P5") throw CorruptArtifact(what + ": not a binary PGM (P5)");
  const std::size_t W = number("width"), H = number("height"), maxval = number("maxval");
  if (maxval != 255) throw CorruptArtifact(what + ": PGM maxval must be 255");
  ++pos;  // single whitespace byte before the raster
  if (pos > bytes.size() || bytes.size() - pos != H * W)
    throw CorruptArtifact(what + ": PGM raster size mismatch");
  SegmentationMask m(H, W, num_classes);
  for (std::size_t i = 0; i < H * W; ++i) {
    const auto v = static_cast<std::uint8_t>(bytes[pos + i]);
    if (v >= num_classes) throw CorruptArtifact(what + ": label " + std::to_string(v) + " >= num_classes");
    m.labels[i] = v;
  }
  return m;
}

inline std::string encode_f32(const Image& img) {
  std::string out;
  out.reserve(img.pixels.size() * 4);
  for (const float v : img.pixels) detail::put_f32(out, v);
  return out;
}

inline Image decode_f32(const std::string& bytes, std::size_t H, std::size_t W, const std::string& what) {
  if (bytes.size() != H * W * 4)
    throw CorruptArtifact(what + ": expected " + std::to_string(H * W * 4) + " bytes, found " +
                          std::to_string(bytes.size()));
  detail::ByteReader r(bytes);
  Image img(H, W);
  for (auto& v : img.pixels) {
    v = r.f32("pixels");
    if (!std::isfinite(v)) throw CorruptArtifact(what + ": non-finite pixel");
  }
  return img;
}

inline nlohmann::json dataset_meta(const Dataset& ds) {
  nlohmann::json splits, seeds;
  auto ids = [](const auto& items) {
    std::vector<std::string> out;
    for (const auto& s : items) out.push_back(s.id);
    return out;
  };
  splits["train"] = ids(ds.train);
  splits["test_source"] = ids(ds.test_source);
  splits["test_target"] = ids(ds.test_target);
  seeds["root_seed"] = ds.config.seed;
  seeds["root_stream"] = static_cast<std::uint64_t>(Stream::data);
  seeds["train_mask_substreams"] = ds.train_mask_seeds;
  seeds["test_source_mask_substreams"] = ds.test_source_mask_seeds;
  seeds["test_target_mask_substreams"] = ds.test_target_mask_seeds;
  seeds["stack_member_substreams"] = ds.train.empty() ? std::vector<std::uint64_t>{} : ds.train.front().seeds;
  return {{"format", "s2s2-dataset"},
          {"version", kDatasetFormatVersion},
          {"rng", Rng::algorithm},
          {"config", dataset_to_json(ds.config)},
          {"splits", splits},
          {"seeds", seeds}};
}

using WriteSink = std::function<void(const fs::path& rel, const std::string& bytes)>;

/// Writes the dataset; returns the paths written, relative to `dir`, in
/// write order. `on_written` sees every file after it lands.
inline std::vector<fs::path> write_dataset(const Dataset& ds, const fs::path& dir, const WriteSink& on_written = {}) {
  std::vector<fs::path> written;
  std::error_code ec;
  fs::create_directories(dir / "masks", ec);
  if (!ec) fs::create_directories(dir / "stacks", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  auto put = [&](const fs::path& rel, const std::string& bytes) {
    write_file_bytes(dir / rel, bytes);
    written.push_back(rel);
    if (on_written) on_written(rel, bytes);
  };
  auto put_sample = [&](const std::string& id, const SegmentationMask& mask, const std::vector<const Image*>& images) {
    put(fs::path("masks") / (id + ".pgm"), encode_pgm(mask));
    fs::create_directories(dir / "stacks" / id, ec);
    if (ec) throw IoError("cannot create " + (dir / "stacks" / id).string() + ": " + ec.message());
    for (std::size_t k = 0; k < images.size(); ++k)
      put(fs::path("stacks") / id / (std::to_string(k) + ".f32"), encode_f32(*images[k]));
  };
  for (const auto& s : ds.train) {
    std::vector<const Image*> imgs;
    for (const auto& im : s.images) imgs.push_back(&im);
    put_sample(s.id, s.mask, imgs);
  }
  for (const auto* split : {&ds.test_source, &ds.test_target})
    for (const auto& s : *split) put_sample(s.id, s.mask, {&s.image});
  put("meta.json", dataset_meta(ds).dump(2) + "\n");
  return written;
}

inline Dataset read_dataset(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path)) throw IoError("no dataset at " + dir.string() + " (missing meta.json)");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file_bytes(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArtifact(meta_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    if (meta.at("format") != "s2s2-dataset" || meta.at("version") != kDatasetFormatVersion)
      throw CorruptArtifact(meta_path.string() + ": unsupported dataset format");
    ds.config = dataset_from_json(meta.at("config"), "meta.config");
    const auto& seeds = meta.at("seeds");
    ds.train_mask_seeds = seeds.at("train_mask_substreams").get<std::vector<std::uint64_t>>();
    ds.test_source_mask_seeds = seeds.at("test_source_mask_substreams").get<std::vector<std::uint64_t>>();
    ds.test_target_mask_seeds = seeds.at("test_target_mask_substreams").get<std::vector<std::uint64_t>>();
    const auto member_seeds = seeds.at("stack_member_substreams").get<std::vector<std::uint64_t>>();
    const std::size_t H = ds.config.mask.height, W = ds.config.mask.width;
    const int K = ds.config.mask.num_classes;
    auto load_mask = [&](const std::string& id) {
      return decode_pgm(read_file_bytes(dir / "masks" / (id + ".pgm")), K, id + ".pgm");
    };
    auto load_image = [&](const std::string& id, std::size_t k) {
      const fs::path p = dir / "stacks" / id / (std::to_string(k) + ".f32");
      return decode_f32(read_file_bytes(p), H, W, p.string());
    };
    const auto& splits = meta.at("splits");
    for (const auto& id : splits.at("train").get<std::vector<std::string>>()) {
      ImageStack s;
      s.id = id;
      s.mask = load_mask(id);
      for (std::size_t k = 0; k < ds.config.stack_size; ++k) s.images.push_back(load_image(id, k));
      s.seeds = member_seeds;
      ds.train.push_back(std::move(s));
    }
    auto load_split = [&](const char* name, std::vector<LabeledImage>& out) {
      for (const auto& id : splits.at(name).get<std::vector<std::string>>())
        out.push_back({id, load_image(id, 0), load_mask(id)});
    };
    load_split("test_source", ds.test_source);
    load_split("test_target", ds.test_target);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArtifact(meta_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CorruptArtifact(meta_path.string() + ": " + e.what());
  }
  if (ds.train.size() != ds.config.num_train || ds.test_source.size() != ds.config.num_test_source ||
      ds.test_target.size() != ds.config.num_test_target)
    throw CorruptArtifact(meta_path.string() + ": split sizes disagree with config");
  return ds;
}

}  // namespace s2s2
