#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "s2s2/diffcore/adam.hpp"
#include "s2s2/diffcore/losses.hpp"
#include "s2s2/diffcore/ops.hpp"
#include "s2s2/diffcore/rng.hpp"
#include "s2s2/errors.hpp"
#include "s2s2/segnet.hpp"
#include "s2s2/synthgen.hpp"

namespace s2s2 {

/// Rungs of the ablation ladder, plus the photometric-only control.
enum class Mode { baseline, aug_only, synth_only, synth_enc, synth_enc_dec };

inline constexpr Mode kAllModes[] = {Mode::baseline, Mode::aug_only, Mode::synth_only, Mode::synth_enc,
                                     Mode::synth_enc_dec};

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::aug_only: return "aug_only";
    case Mode::synth_only: return "synth_only";
    case Mode::synth_enc: return "synth_enc";
    case Mode::synth_enc_dec: return "synth_enc_dec";
  }
  return "?";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  for (const Mode m : kAllModes)
    if (mode_name(m) == s) return m;
  return std::nullopt;
}

struct TrainConfig {
  Mode mode = Mode::synth_enc;
  double alpha_enc = 0.4;
  double alpha_dec = 0.0;
  int epochs = 30;
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  NetConfig net;

  /// Two images per mask per step (stack member or augmented copy).
  bool paired() const { return mode != Mode::baseline; }
  bool use_synthetic() const {
    return mode == Mode::synth_only || mode == Mode::synth_enc || mode == Mode::synth_enc_dec;
  }
  /// Weights actually applied; rungs without a consistency term use 0.
  double effective_alpha_enc() const {
    return (mode == Mode::synth_enc || mode == Mode::synth_enc_dec || mode == Mode::aug_only) ? alpha_enc : 0.0;
  }
  double effective_alpha_dec() const {
    return (mode == Mode::synth_enc_dec || mode == Mode::aug_only) ? alpha_dec : 0.0;
  }

  void validate() const {
    if (!(alpha_enc >= 0.0) || !(alpha_dec >= 0.0)) throw ConfigError("train: alpha_enc and alpha_dec must be >= 0");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if ((mode == Mode::synth_enc || mode == Mode::aug_only) && !(alpha_enc > 0.0))
      throw ConfigError(std::string("train: mode ") + std::string(mode_name(mode)) + " requires alpha_enc > 0");
    if (mode == Mode::synth_enc_dec && !(alpha_enc > 0.0 && alpha_dec > 0.0))
      throw ConfigError("train: mode synth_enc_dec requires alpha_enc > 0 and alpha_dec > 0");
    try {
      net.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("train.net: ") + e.what());
    }
  }
};

struct LossRecord {
  std::size_t step = 0;  // 1-based optimizer step
  std::size_t epoch = 0;
  double seg = 0.0;
  double sc_enc = 0.0;
  double sc_dec = 0.0;
  double total = 0.0;
};

/// Cross-entropy plus (1 - mean soft Dice over classes present in the mask).
template <class T>
Tensor<T> seg_loss(const Tensor<T>& logits, const SegmentationMask& mask) {
  return add(softmax_cross_entropy(logits, mask), soft_dice_loss(softmax_channels(logits), mask));
}

/// Mean over spatial locations of the cosine distance between the channel
/// vectors of two feature maps. In [0, 2].
template <class T>
Tensor<T> consistency_loss(const Tensor<T>& feat_a, const Tensor<T>& feat_b) {
  return mean(cosine_distance_map(feat_a, feat_b, T(1e-8)));
}

/// L = seg(logits_0) + seg(logits_1) + alpha_enc D(enc_0, enc_1) + alpha_dec D(dec_0, dec_1).
template <class T>
std::pair<Tensor<T>, LossRecord> total_loss(const NetOutput<T>& out0, const NetOutput<T>& out1,
                                            const SegmentationMask& mask, double alpha_enc, double alpha_dec) {
  const Tensor<T> seg = add(seg_loss(out0.logits, mask), seg_loss(out1.logits, mask));
  const Tensor<T> enc = consistency_loss(out0.enc_feat, out1.enc_feat);
  const Tensor<T> dec = consistency_loss(out0.dec_feat, out1.dec_feat);
  Tensor<T> total = add(add(seg, scale(enc, static_cast<T>(alpha_enc))), scale(dec, static_cast<T>(alpha_dec)));
  LossRecord rec;
  rec.seg = static_cast<double>(seg.item());
  rec.sc_enc = static_cast<double>(enc.item());
  rec.sc_dec = static_cast<double>(dec.item());
  rec.total = static_cast<double>(total.item());
  return {std::move(total), rec};
}

/// Gain/offset jitter plus a random blur of one image; the `aug_only` pair.
inline Image photometric_augment(const Image& image, Rng& rng) {
  const double gain = rng.uniform(0.7, 1.3);
  const double offset = rng.uniform(-0.15, 0.15);
  const double sigma = rng.uniform(0.0, 1.0);
  std::vector<double> px(image.pixels.begin(), image.pixels.end());
  for (auto& v : px) v = gain * v + offset;
  if (sigma > 0.05) detail::gaussian_blur(px, image.height, image.width, sigma);
  Image out(image.height, image.width);
  for (std::size_t i = 0; i < px.size(); ++i) out.pixels[i] = static_cast<float>(std::clamp(px[i], 0.0, 1.0));
  return out;
}

struct StepResult {
  LossRecord record;
  std::size_t forward_calls = 0;
};

/// One optimizer update on a batch of stacks. Baseline mode uses only member
/// 0 and one segmentation loss. Paired modes pair member 0 with a uniformly
/// drawn member in 1..n-1 (or, for aug_only, an augmented copy), so exactly
/// two forward passes run per stack. The batch loss is the mean over stacks.
template <class T>
StepResult train_step(NetParams<T>& params, Adam<T>& optimizer, std::span<const ImageStack* const> batch,
                      const TrainConfig& cfg, Rng& sampling) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const double ae = cfg.effective_alpha_enc(), ad = cfg.effective_alpha_dec();
  const T inv_b = T(1) / static_cast<T>(batch.size());
  StepResult res;
  params.zero_grad();
  for (const ImageStack* stack : batch) {
    if (stack->images.empty()) throw std::invalid_argument("train_step: empty stack");
    const Tensor<T> x0 = image_tensor<T>(stack->images[0]);
    if (!cfg.paired()) {
      const NetOutput<T> out0 = forward(params, x0);
      ++res.forward_calls;
      const Tensor<T> loss = seg_loss(out0.logits, stack->mask);
      backward(loss, inv_b);
      res.record.seg += static_cast<double>(loss.item());
      res.record.total += static_cast<double>(loss.item());
      continue;
    }
    Tensor<T> x1;
    if (cfg.use_synthetic()) {
      if (stack->images.size() < 2) {
        throw std::invalid_argument("train_step: mode " + std::string(mode_name(cfg.mode)) +
                                    " needs stacks with >= 2 members");
      }
      const std::size_t j = 1 + static_cast<std::size_t>(sampling.below(stack->images.size() - 1));
      x1 = image_tensor<T>(stack->images[j]);
    } else {
      x1 = image_tensor<T>(photometric_augment(stack->images[0], sampling));
    }
    const NetOutput<T> out0 = forward(params, x0);
    const NetOutput<T> out1 = forward(params, x1);
    res.forward_calls += 2;
    auto [loss, rec] = total_loss(out0, out1, stack->mask, ae, ad);
    backward(loss, inv_b);
    res.record.seg += rec.seg;
    res.record.sc_enc += rec.sc_enc;
    res.record.sc_dec += rec.sc_dec;
    res.record.total += rec.total;
  }
  const double n = static_cast<double>(batch.size());
  res.record.seg /= n;
  res.record.sc_enc /= n;
  res.record.sc_dec /= n;
  res.record.total /= n;
  optimizer.step(params.tensors);
  return res;
}

/// Seeded permutation of [0, n) used to order each epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, Rng& shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
  return order;
}

template <class T>
struct TrainResult {
  NetParams<T> params;
  std::vector<LossRecord> history;
  std::size_t forward_calls = 0;
};

/// Per-epoch means, for progress reporting.
using EpochCallback = std::function<void(std::size_t epoch, const LossRecord& mean)>;

/// Fixed-epoch training from a seed-determined initialization. Randomness
/// comes from three substreams of cfg.seed: init, shuffle, sampling.
template <class T = float>
TrainResult<T> train(const TrainConfig& cfg, std::span<const ImageStack> stacks, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (stacks.empty()) throw std::invalid_argument("train: empty dataset");
  TrainResult<T> result{init_params<T>(cfg.net, cfg.seed), {}, 0};
  Adam<T> optimizer(AdamConfig{cfg.learning_rate});
  Rng shuffle(cfg.seed, Stream::shuffle);
  Rng sampling(cfg.seed, Stream::sampling);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(stacks.size(), shuffle);
    LossRecord epoch_mean;
    std::size_t steps_this_epoch = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const ImageStack*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(&stacks[order[i]]);
      StepResult r;
      try {
        r = train_step(result.params, optimizer, std::span<const ImageStack* const>(batch), cfg, sampling);
      } catch (const NonFiniteError& e) {
        throw RunFailure("train: non-finite value at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step + 1) + ": " + e.what());
      }
      if (!std::isfinite(r.record.total)) {
        throw RunFailure("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step + 1));
      }
      r.record.step = ++step;
      r.record.epoch = static_cast<std::size_t>(epoch);
      result.forward_calls += r.forward_calls;
      result.history.push_back(r.record);
      epoch_mean.seg += r.record.seg;
      epoch_mean.sc_enc += r.record.sc_enc;
      epoch_mean.sc_dec += r.record.sc_dec;
      epoch_mean.total += r.record.total;
      ++steps_this_epoch;
    }
    if (on_epoch && steps_this_epoch > 0) {
      const double n = static_cast<double>(steps_this_epoch);
      epoch_mean.seg /= n;
      epoch_mean.sc_enc /= n;
      epoch_mean.sc_dec /= n;
      epoch_mean.total /= n;
      epoch_mean.step = step;
      epoch_mean.epoch = static_cast<std::size_t>(epoch);
      on_epoch(static_cast<std::size_t>(epoch), epoch_mean);
    }
  }
  return result;
}

}  // namespace s2s2
