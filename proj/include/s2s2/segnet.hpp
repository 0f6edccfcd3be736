#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2s2/diffcore/ops.hpp"
#include "s2s2/diffcore/rng.hpp"
#include "s2s2/diffcore/tensor.hpp"
#include "s2s2/types.hpp"

namespace s2s2 {

struct NetConfig {
  int in_channels = 1;
  int base_channels = 16;
  int depth = 2;
  int num_classes = 4;

  void validate() const {
    if (in_channels < 1) throw std::invalid_argument("NetConfig: in_channels must be >= 1");
    if (base_channels < 1) throw std::invalid_argument("NetConfig: base_channels must be >= 1");
    if (depth < 1) throw std::invalid_argument("NetConfig: depth must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("NetConfig: num_classes must be >= 2");
  }

  void validate_input(std::size_t height, std::size_t width) const {
    const std::size_t f = std::size_t{1} << depth;
    if (height == 0 || width == 0 || height % f != 0 || width % f != 0) {
      throw std::invalid_argument("NetConfig: input " + std::to_string(height) + "x" + std::to_string(width) +
                                  " not divisible by 2^depth = " + std::to_string(f));
    }
  }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Weights of the U-shaped network, in a fixed order. The final 1×1 conv
/// ("head") is the pixel classifier.
template <class T>
struct NetParams {
  NetConfig config;
  std::uint64_t init_seed = 0;
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  const Tensor<T>& get(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return tensors[i];
    throw std::out_of_range("NetParams: no tensor named " + name);
  }
  Tensor<T>& get(const std::string& name) {
    return const_cast<Tensor<T>&>(static_cast<const NetParams&>(*this).get(name));
  }

  void zero_grad() {
    for (auto& t : tensors) t.zero_grad();
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }

  template <class U>
  NetParams<U> cast() const {
    NetParams<U> out{config, init_seed, names, {}};
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>(true));
    return out;
  }

  /// Deep copy: fresh leaf tensors with the same values.
  NetParams clone() const { return cast<T>(); }
};

struct ConvSpec {
  std::string name;
  int in_channels;
  int out_channels;
  int kernel;
};

/// Layer table for a config. Encoder level l has two 3×3 convs at width
/// base·2^l, the bottleneck runs at base·2^depth, each decoder level
/// concatenates the skip and applies two 3×3 convs.
inline std::vector<ConvSpec> layer_specs(const NetConfig& cfg) {
  cfg.validate();
  std::vector<ConvSpec> specs;
  int in = cfg.in_channels;
  for (int l = 0; l < cfg.depth; ++l) {
    const int w = cfg.base_channels << l;
    specs.push_back({"enc" + std::to_string(l) + ".conv1", in, w, 3});
    specs.push_back({"enc" + std::to_string(l) + ".conv2", w, w, 3});
    in = w;
  }
  const int bw = cfg.base_channels << cfg.depth;
  specs.push_back({"bottleneck.conv1", in, bw, 3});
  specs.push_back({"bottleneck.conv2", bw, bw, 3});
  int up = bw;
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const int w = cfg.base_channels << l;
    specs.push_back({"dec" + std::to_string(l) + ".conv1", up + w, w, 3});
    specs.push_back({"dec" + std::to_string(l) + ".conv2", w, w, 3});
    up = w;
  }
  specs.push_back({"head", cfg.base_channels, cfg.num_classes, 1});
  return specs;
}

/// He-uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
template <class T>
NetParams<T> init_params(const NetConfig& cfg, std::uint64_t seed) {
  NetParams<T> p;
  p.config = cfg;
  p.init_seed = seed;
  Rng rng(seed, Stream::init);
  for (const auto& s : layer_specs(cfg)) {
    const std::size_t fan_in = static_cast<std::size_t>(s.in_channels) * s.kernel * s.kernel;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    const Shape wshape{static_cast<std::size_t>(s.out_channels), static_cast<std::size_t>(s.in_channels),
                       static_cast<std::size_t>(s.kernel), static_cast<std::size_t>(s.kernel)};
    std::vector<T> w(shape_numel(wshape));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    p.names.push_back(s.name + ".weight");
    p.tensors.emplace_back(wshape, std::move(w), true);
    p.names.push_back(s.name + ".bias");
    p.tensors.push_back(Tensor<T>::zeros(Shape{static_cast<std::size_t>(s.out_channels)}, true));
  }
  return p;
}

template <class T>
struct NetOutput {
  Tensor<T> enc_feat;  // bottleneck output [C_e, H/2^d, W/2^d]
  Tensor<T> dec_feat;  // last pre-classifier map [base, H, W]
  Tensor<T> logits;    // [K, H, W]
};

template <class T>
Tensor<T> image_tensor(const Image& image) {
  return Tensor<T>(Shape{1, image.height, image.width}, std::vector<T>(image.pixels.begin(), image.pixels.end()));
}

namespace detail {

template <class T>
Tensor<T> conv_block(const NetParams<T>& p, const std::string& name, const Tensor<T>& x) {
  return relu(conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), 1));
}

}  // namespace detail

/// Pure function of (params, image).
template <class T>
NetOutput<T> forward(const NetParams<T>& p, const Tensor<T>& image) {
  const auto& cfg = p.config;
  detail::require_rank(image, 3, "forward");
  if (image.dim(0) != static_cast<std::size_t>(cfg.in_channels)) {
    throw std::invalid_argument("forward: image has " + std::to_string(image.dim(0)) + " channels, net expects " +
                                std::to_string(cfg.in_channels));
  }
  cfg.validate_input(image.dim(1), image.dim(2));

  std::vector<Tensor<T>> skips;
  Tensor<T> x = image;
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string n = "enc" + std::to_string(l);
    x = detail::conv_block(p, n + ".conv2", detail::conv_block(p, n + ".conv1", x));
    skips.push_back(x);
    x = maxpool2x(x);
  }
  x = detail::conv_block(p, "bottleneck.conv2", detail::conv_block(p, "bottleneck.conv1", x));
  NetOutput<T> out;
  out.enc_feat = x;
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const std::string n = "dec" + std::to_string(l);
    x = concat_channels(upsample_nearest2x(x), skips[static_cast<std::size_t>(l)]);
    x = detail::conv_block(p, n + ".conv2", detail::conv_block(p, n + ".conv1", x));
  }
  out.dec_feat = x;
  out.logits = conv2d(x, p.get("head.weight"), p.get("head.bias"), 0);
  return out;
}

/// Per-pixel argmax of [K,H,W] logits; ties go to the lowest class index.
template <class T>
SegmentationMask argmax_mask(const Tensor<T>& logits) {
  detail::require_rank(logits, 3, "argmax_mask");
  const std::size_t K = logits.dim(0), H = logits.dim(1), W = logits.dim(2), P = H * W;
  SegmentationMask m(H, W, static_cast<int>(K));
  const T* z = logits.data().data();
  for (std::size_t i = 0; i < P; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < K; ++c)
      if (z[c * P + i] > z[best * P + i]) best = c;
    m.labels[i] = static_cast<std::uint8_t>(best);
  }
  return m;
}

template <class T>
SegmentationMask predict(const NetParams<T>& p, const Image& image) {
  // Inference needs no graph: run on detached copies of the weights.
  NetParams<T> frozen{p.config, p.init_seed, p.names, {}};
  for (const auto& t : p.tensors) frozen.tensors.push_back(t.detach());
  return argmax_mask(forward(frozen, image_tensor<T>(image)).logits);
}

}  // namespace s2s2
