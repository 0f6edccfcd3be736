#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "s2s2/segnet.hpp"
#include "s2s2/synthgen.hpp"
#include "s2s2/types.hpp"

namespace s2s2 {

/// Ratio metrics for one class of one sample. A metric is empty when its
/// denominator is zero.
struct ClassScores {
  std::optional<double> dice, iou, precision, recall;
};

struct PixelCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

namespace detail {

inline void require_same_dims(const SegmentationMask& a, const SegmentationMask& b, const char* op) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument(std::string(op) + ": mask dims differ");
}

inline std::optional<double> ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

}  // namespace detail

inline PixelCounts pixel_counts(const SegmentationMask& pred, const SegmentationMask& gt, int c) {
  detail::require_same_dims(pred, gt, "pixel_counts");
  PixelCounts k;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const bool p = pred.labels[i] == c, g = gt.labels[i] == c;
    k.tp += p && g;
    k.fp += p && !g;
    k.fn += !p && g;
  }
  return k;
}

inline ClassScores class_metrics(const SegmentationMask& pred, const SegmentationMask& gt, int c) {
  const PixelCounts k = pixel_counts(pred, gt, c);
  const auto tp = static_cast<double>(k.tp), fp = static_cast<double>(k.fp), fn = static_cast<double>(k.fn);
  return {detail::ratio(2 * tp, 2 * tp + fp + fn), detail::ratio(tp, tp + fp + fn), detail::ratio(tp, tp + fp),
          detail::ratio(tp, tp + fn)};
}

/// Squared Euclidean distance from every pixel to the nearest pixel of
/// `inside` (exact; separable lower-envelope transform). Infinity if the set
/// is empty.
inline std::vector<double> squared_distance_transform(const std::vector<bool>& inside, std::size_t H, std::size_t W) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> f(H * W);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = inside[i] ? 0.0 : inf;

  auto transform_1d = [inf](std::vector<double>& line) {
    const std::size_t n = line.size();
    std::vector<double> d(n);
    std::vector<std::size_t> v(n);
    std::vector<double> z(n + 1);
    std::size_t k = 0;
    std::size_t first = n;
    for (std::size_t q = 0; q < n; ++q)
      if (line[q] < inf) {
        first = q;
        break;
      }
    if (first == n) return;
    v[0] = first;
    z[0] = -inf;
    z[1] = inf;
    auto meet = [&line](std::size_t q, std::size_t p) {
      const auto qd = static_cast<double>(q), pd = static_cast<double>(p);
      return ((line[q] + qd * qd) - (line[p] + pd * pd)) / (2.0 * qd - 2.0 * pd);
    };
    for (std::size_t q = first + 1; q < n; ++q) {
      if (line[q] == inf) continue;
      double s = meet(q, v[k]);
      while (s <= z[k]) s = meet(q, v[--k]);  // z[0] = -inf stops at k = 0
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
      while (z[k + 1] < static_cast<double>(q)) ++k;
      const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
      d[q] = dq * dq + line[v[k]];
    }
    line = std::move(d);
  };

  std::vector<double> line;
  for (std::size_t x = 0; x < W; ++x) {
    line.resize(H);
    for (std::size_t y = 0; y < H; ++y) line[y] = f[y * W + x];
    transform_1d(line);
    for (std::size_t y = 0; y < H; ++y) f[y * W + x] = line[y];
  }
  for (std::size_t y = 0; y < H; ++y) {
    line.assign(f.begin() + static_cast<std::ptrdiff_t>(y * W), f.begin() + static_cast<std::ptrdiff_t>((y + 1) * W));
    transform_1d(line);
    std::copy(line.begin(), line.end(), f.begin() + static_cast<std::ptrdiff_t>(y * W));
  }
  return f;
}

/// Symmetric Hausdorff distance in pixels between the class-c pixel sets of
/// two masks; empty if either set is empty.
inline std::optional<double> hausdorff(const SegmentationMask& pred, const SegmentationMask& gt, int c) {
  detail::require_same_dims(pred, gt, "hausdorff");
  const std::size_t H = gt.height, W = gt.width;
  std::vector<bool> a(H * W), b(H * W);
  bool any_a = false, any_b = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = pred.labels[i] == c;
    b[i] = gt.labels[i] == c;
    any_a = any_a || a[i];
    any_b = any_b || b[i];
  }
  if (!any_a || !any_b) return std::nullopt;
  const auto da = squared_distance_transform(a, H, W);
  const auto db = squared_distance_transform(b, H, W);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]) worst = std::max(worst, db[i]);
    if (b[i]) worst = std::max(worst, da[i]);
  }
  return std::sqrt(worst);
}

struct ClassSummary {
  double dice = 0, iou = 0, precision = 0, recall = 0;
  std::optional<double> hausdorff;
  // Samples in which each metric was defined.
  std::size_t n_dice = 0, n_iou = 0, n_precision = 0, n_recall = 0, n_hausdorff = 0;
};

/// Per-class means over the samples where each metric is defined, and means
/// over foreground classes (class 0 excluded) of those per-class values.
struct MetricsRecord {
  std::map<int, ClassSummary> per_class;
  double mean_dice = 0, mean_iou = 0, mean_precision = 0, mean_recall = 0;
  std::optional<double> mean_hausdorff;
  std::size_t num_samples = 0;
};

inline MetricsRecord summarize(std::span<const SegmentationMask> preds, std::span<const SegmentationMask> gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("summarize: prediction/ground-truth count mismatch");
  if (gts.empty()) throw std::invalid_argument("summarize: empty split");
  const int K = gts.front().num_classes;
  struct Acc {
    double dice = 0, iou = 0, precision = 0, recall = 0, hd = 0;
    std::size_t nd = 0, ni = 0, np = 0, nr = 0, nh = 0;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(K));
  for (std::size_t s = 0; s < gts.size(); ++s) {
    for (int c = 1; c < K; ++c) {
      auto& a = acc[static_cast<std::size_t>(c)];
      const ClassScores m = class_metrics(preds[s], gts[s], c);
      if (m.dice) a.dice += *m.dice, ++a.nd;
      if (m.iou) a.iou += *m.iou, ++a.ni;
      if (m.precision) a.precision += *m.precision, ++a.np;
      if (m.recall) a.recall += *m.recall, ++a.nr;
      if (const auto hd = hausdorff(preds[s], gts[s], c)) a.hd += *hd, ++a.nh;
    }
  }
  MetricsRecord r;
  r.num_samples = gts.size();
  double sd = 0, si = 0, sp = 0, sr = 0, sh = 0;
  std::size_t cd = 0, ci = 0, cp = 0, cr = 0, ch = 0;
  for (int c = 1; c < K; ++c) {
    const auto& a = acc[static_cast<std::size_t>(c)];
    ClassSummary cs;
    cs.n_dice = a.nd, cs.n_iou = a.ni, cs.n_precision = a.np, cs.n_recall = a.nr, cs.n_hausdorff = a.nh;
    if (a.nd) cs.dice = a.dice / static_cast<double>(a.nd), sd += cs.dice, ++cd;
    if (a.ni) cs.iou = a.iou / static_cast<double>(a.ni), si += cs.iou, ++ci;
    if (a.np) cs.precision = a.precision / static_cast<double>(a.np), sp += cs.precision, ++cp;
    if (a.nr) cs.recall = a.recall / static_cast<double>(a.nr), sr += cs.recall, ++cr;
    if (a.nh) cs.hausdorff = a.hd / static_cast<double>(a.nh), sh += *cs.hausdorff, ++ch;
    r.per_class[c] = cs;
  }
  if (cd) r.mean_dice = sd / static_cast<double>(cd);
  if (ci) r.mean_iou = si / static_cast<double>(ci);
  if (cp) r.mean_precision = sp / static_cast<double>(cp);
  if (cr) r.mean_recall = sr / static_cast<double>(cr);
  if (ch) r.mean_hausdorff = sh / static_cast<double>(ch);
  return r;
}

/// Predicts every image of the split with `params` and summarizes.
template <class T>
MetricsRecord evaluate(const NetParams<T>& params, std::span<const LabeledImage> split) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<SegmentationMask> preds, gts;
  for (const auto& s : split) {
    preds.push_back(predict(params, s.image));
    gts.push_back(s.mask);
  }
  return summarize(preds, gts);
}

}  // namespace s2s2
