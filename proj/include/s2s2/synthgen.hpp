#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2s2/diffcore/rng.hpp"
#include "s2s2/types.hpp"

namespace s2s2 {

/// Appearance model of one imaging domain.
struct DomainParams {
  std::vector<double> class_intensity;  // base gray level per class, in [0,1]
  double intensity_jitter = 0.0;        // per-render uniform offset of each class level
  double texture_noise_std = 0.0;
  double bias_field_strength = 0.0;     // smooth multiplicative gradient
  double blur_sigma = 0.0;
  double gamma_lo = 1.0;
  double gamma_hi = 1.0;

  void validate(int num_classes) const {
    if (static_cast<int>(class_intensity.size()) != num_classes) {
      throw std::invalid_argument("DomainParams: class_intensity has " + std::to_string(class_intensity.size()) +
                                  " entries, expected " + std::to_string(num_classes));
    }
    for (const double v : class_intensity)
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("DomainParams: class_intensity outside [0,1]");
    if (!(intensity_jitter >= 0.0)) throw std::invalid_argument("DomainParams: intensity_jitter must be >= 0");
    if (!(texture_noise_std >= 0.0)) throw std::invalid_argument("DomainParams: texture_noise_std must be >= 0");
    if (!(bias_field_strength >= 0.0)) throw std::invalid_argument("DomainParams: bias_field_strength must be >= 0");
    if (!(blur_sigma >= 0.0)) throw std::invalid_argument("DomainParams: blur_sigma must be >= 0");
    if (!(gamma_lo > 0.0 && gamma_lo <= gamma_hi)) throw std::invalid_argument("DomainParams: need 0 < gamma_lo <= gamma_hi");
  }

  /// The appearance of an "original" image: no per-render intensity jitter
  /// and no gamma change. Noise, bias field and blur are kept.
  DomainParams canonical() const {
    DomainParams d = *this;
    d.intensity_jitter = 0.0;
    d.gamma_lo = d.gamma_hi = 1.0;
    return d;
  }

  friend bool operator==(const DomainParams&, const DomainParams&) = default;
};

/// Source appearance for K classes: evenly spaced gray levels with
/// background darkest.
inline DomainParams default_source_domain(int num_classes) {
  DomainParams d;
  d.class_intensity.resize(static_cast<std::size_t>(num_classes));
  d.class_intensity[0] = 0.10;
  for (int c = 1; c < num_classes; ++c) {
    d.class_intensity[static_cast<std::size_t>(c)] = 0.40 + 0.50 * (c - 1) / std::max(1, num_classes - 2);
  }
  d.intensity_jitter = 0.10;
  d.texture_noise_std = 0.04;
  d.bias_field_strength = 0.10;
  d.blur_sigma = 0.6;
  d.gamma_lo = 0.7;
  d.gamma_hi = 1.4;
  return d;
}

/// Shifted domain: foreground levels rotated by one class, doubled texture
/// noise, tripled bias field.
inline DomainParams default_target_domain(int num_classes) {
  const DomainParams src = default_source_domain(num_classes);
  DomainParams d = src;
  for (int c = 1; c < num_classes; ++c) {
    const int from = c == num_classes - 1 ? 1 : c + 1;
    d.class_intensity[static_cast<std::size_t>(c)] = src.class_intensity[static_cast<std::size_t>(from)];
  }
  d.intensity_jitter = 0.0;
  d.texture_noise_std = 2.0 * src.texture_noise_std;
  d.bias_field_strength = 3.0 * src.bias_field_strength;
  d.gamma_lo = d.gamma_hi = 1.0;
  return d;
}

struct MaskConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  int num_classes = 4;
  int shapes_per_class = 2;

  void validate() const {
    if (num_classes < 2 || num_classes > 255) throw std::invalid_argument("MaskConfig: num_classes must be in [2,255]");
    if (height < 16 || width < 16) throw std::invalid_argument("MaskConfig: height and width must be >= 16");
    if (shapes_per_class < 1) throw std::invalid_argument("MaskConfig: shapes_per_class must be >= 1");
  }
};

namespace detail {

// Draws one shape of class `c` onto the mask. Shape family by class:
// elongated ellipses, lobed blobs, small near-circles.
inline void draw_shape(SegmentationMask& m, int c, Rng& rng) {
  const double S = static_cast<double>(std::min(m.height, m.width));
  const double cy = rng.uniform(0.15 * S, static_cast<double>(m.height) - 0.15 * S);
  const double cx = rng.uniform(0.15 * S, static_cast<double>(m.width) - 0.15 * S);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);
  const int family = (c - 1) % 3;

  double a = 0, b = 0, r0 = 0, amp1 = 0, amp2 = 0, ph1 = 0, ph2 = 0;
  if (family == 0) {
    a = rng.uniform(0.18, 0.28) * S;
    b = rng.uniform(0.06, 0.10) * S;
  } else if (family == 1) {
    r0 = rng.uniform(0.11, 0.16) * S;
    amp1 = rng.uniform(0.15, 0.30);
    amp2 = rng.uniform(0.05, 0.15);
    ph1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    ph2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  } else {
    a = rng.uniform(0.05, 0.08) * S;
    b = a * rng.uniform(0.8, 1.0);
  }
  const double reach = family == 1 ? r0 * (1.0 + amp1 + amp2) : a;
  const auto y0 = static_cast<std::ptrdiff_t>(std::floor(cy - reach - 1));
  const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(cy + reach + 1));
  const auto x0 = static_cast<std::ptrdiff_t>(std::floor(cx - reach - 1));
  const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(cx + reach + 1));
  for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, y0); y <= y1 && y < static_cast<std::ptrdiff_t>(m.height); ++y) {
    for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, x0); x <= x1 && x < static_cast<std::ptrdiff_t>(m.width); ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double u = ct * dx + st * dy;
      const double v = -st * dx + ct * dy;
      bool inside;
      if (family == 1) {
        const double r = std::sqrt(u * u + v * v);
        const double phi = std::atan2(v, u);
        inside = r <= r0 * (1.0 + amp1 * std::sin(3.0 * phi + ph1) + amp2 * std::sin(5.0 * phi + ph2));
      } else {
        inside = (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
      }
      if (inside) m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<std::uint8_t>(c);
    }
  }
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    s += v;
  }
  for (auto& v : k) v /= s;
  return k;
}

// Separable blur with clamp-to-edge borders.
inline void gaussian_blur(std::vector<double>& img, std::size_t H, std::size_t W, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  std::vector<double> tmp(img.size());
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t i = -r; i <= r; ++i)
        s += k[static_cast<std::size_t>(i + r)] * img[y * W + clampi(static_cast<std::ptrdiff_t>(x) + i, W)];
      tmp[y * W + x] = s;
    }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t i = -r; i <= r; ++i)
        s += k[static_cast<std::size_t>(i + r)] * tmp[clampi(static_cast<std::ptrdiff_t>(y) + i, H) * W + x];
      img[y * W + x] = s;
    }
}

}  // namespace detail

/// Background plus `shapes_per_class` shapes per foreground class, drawn in
/// random order so later shapes overwrite earlier ones. A class left empty
/// gets up to 10 extra shapes before its absence is accepted.
inline SegmentationMask gen_mask(Rng& rng, const MaskConfig& cfg) {
  cfg.validate();
  SegmentationMask m(cfg.height, cfg.width, cfg.num_classes);
  std::vector<int> order;
  for (int c = 1; c < cfg.num_classes; ++c)
    for (int s = 0; s < cfg.shapes_per_class; ++s) order.push_back(c);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  for (const int c : order) detail::draw_shape(m, c, rng);
  for (int c = 1; c < cfg.num_classes; ++c) {
    for (int attempt = 0; attempt < 10 && !m.contains(c); ++attempt) detail::draw_shape(m, c, rng);
  }
  return m;
}

/// Renders one image of `mask`: per-class level plus jitter, texture noise,
/// multiplicative bias field, Gaussian blur, gamma, clamp to [0,1].
inline Image render(const SegmentationMask& mask, const DomainParams& dp, Rng& rng) {
  dp.validate(mask.num_classes);
  const std::size_t H = mask.height, W = mask.width;
  std::vector<double> level(dp.class_intensity);
  if (dp.intensity_jitter > 0.0)
    for (auto& v : level) v += rng.uniform(-dp.intensity_jitter, dp.intensity_jitter);

  std::vector<double> img(H * W);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = level[mask.labels[i]];
  if (dp.texture_noise_std > 0.0)
    for (auto& v : img) v += rng.normal(0.0, dp.texture_noise_std);
  if (dp.bias_field_strength > 0.0) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double gx = std::cos(angle), gy = std::sin(angle);
    for (std::size_t y = 0; y < H; ++y) {
      const double v = 2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(H) - 1.0;
      for (std::size_t x = 0; x < W; ++x) {
        const double u = 2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(W) - 1.0;
        img[y * W + x] *= 1.0 + dp.bias_field_strength * (gx * u + gy * v);
      }
    }
  }
  if (dp.blur_sigma > 0.0) detail::gaussian_blur(img, H, W, dp.blur_sigma);
  const double gamma = dp.gamma_hi > dp.gamma_lo ? rng.uniform(dp.gamma_lo, dp.gamma_hi) : dp.gamma_lo;
  Image out(H, W);
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = std::clamp(img[i], 0.0, 1.0);
    if (gamma != 1.0) v = std::pow(v, gamma);
    out.pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

/// n renders of one mask. Member 0 is the canonical "original" image;
/// members 1..n-1 are appearance-varied renders. Member k draws from
/// substream k of `rng`.
struct ImageStack {
  std::string id;
  SegmentationMask mask;
  std::vector<Image> images;
  std::vector<std::uint64_t> seeds;  // substream id of each member

  std::size_t size() const { return images.size(); }
};

inline ImageStack gen_stack(const SegmentationMask& mask, const DomainParams& dp, std::size_t n, const Rng& rng) {
  if (n < 2) throw std::invalid_argument("gen_stack: stack size must be >= 2, got " + std::to_string(n));
  ImageStack s;
  s.mask = mask;
  for (std::size_t k = 0; k < n; ++k) {
    Rng member = rng.substream(k + 1);
    s.images.push_back(render(mask, k == 0 ? dp.canonical() : dp, member));
    s.seeds.push_back(k + 1);
  }
  return s;
}

struct LabeledImage {
  std::string id;
  Image image;
  SegmentationMask mask;
};

struct DatasetConfig {
  MaskConfig mask;
  std::size_t num_train = 200;
  std::size_t num_test_source = 50;
  std::size_t num_test_target = 50;
  std::size_t stack_size = 16;
  std::uint64_t seed = 2024;
  DomainParams source = default_source_domain(4);
  DomainParams target = default_target_domain(4);

  void validate() const {
    mask.validate();
    if (num_train < 1 || num_test_source < 1 || num_test_target < 1)
      throw std::invalid_argument("DatasetConfig: split sizes must be >= 1");
    if (stack_size < 2) throw std::invalid_argument("DatasetConfig: stack_size must be >= 2");
    source.validate(mask.num_classes);
    target.validate(mask.num_classes);
  }
};

/// Mask substream ids are disjoint across splits by construction.
inline constexpr std::uint64_t kTrainMaskBase = 0;
inline constexpr std::uint64_t kSourceTestMaskBase = 1'000'000;
inline constexpr std::uint64_t kTargetTestMaskBase = 2'000'000;

struct Dataset {
  DatasetConfig config;
  std::vector<ImageStack> train;
  std::vector<LabeledImage> test_source;
  std::vector<LabeledImage> test_target;
  std::vector<std::uint64_t> train_mask_seeds, test_source_mask_seeds, test_target_mask_seeds;
};

inline std::string sample_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu", prefix, i);
  return buf;
}

/// Pure function of the config (including its seed).
inline Dataset gen_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  const Rng root(cfg.seed, Stream::data);
  for (std::size_t i = 0; i < cfg.num_train; ++i) {
    const std::uint64_t key = kTrainMaskBase + i;
    Rng r = root.substream(key);
    ImageStack s = gen_stack(gen_mask(r, cfg.mask), cfg.source, cfg.stack_size, r);
    s.id = sample_id("train", i);
    ds.train.push_back(std::move(s));
    ds.train_mask_seeds.push_back(key);
  }
  auto test_split = [&](std::uint64_t base, std::size_t count, const DomainParams& dp, const char* prefix,
                        std::vector<LabeledImage>& out, std::vector<std::uint64_t>& seeds) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t key = base + i;
      Rng r = root.substream(key);
      LabeledImage li;
      li.mask = gen_mask(r, cfg.mask);
      Rng member = r.substream(1);
      li.image = render(li.mask, dp.canonical(), member);
      li.id = sample_id(prefix, i);
      out.push_back(std::move(li));
      seeds.push_back(key);
    }
  };
  test_split(kSourceTestMaskBase, cfg.num_test_source, cfg.source, "src", ds.test_source, ds.test_source_mask_seeds);
  test_split(kTargetTestMaskBase, cfg.num_test_target, cfg.target, "tgt", ds.test_target, ds.test_target_mask_seeds);
  return ds;
}

}  // namespace s2s2
