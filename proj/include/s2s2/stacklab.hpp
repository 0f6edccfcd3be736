#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2s2/diffcore/rng.hpp"

namespace s2s2::stacklab {

using Array = std::vector<double>;

/// n same-shape arrays plus their elementwise sample statistics.
struct FeatureStack {
  std::vector<Array> items;

  FeatureStack() = default;
  explicit FeatureStack(std::vector<Array> xs) : items(std::move(xs)) { validate(); }

  std::size_t size() const { return items.size(); }
  std::size_t length() const { return items.empty() ? 0 : items.front().size(); }

  void validate() const {
    if (items.empty()) throw std::invalid_argument("FeatureStack: empty stack");
    for (const auto& it : items) {
      if (it.size() != items.front().size()) throw std::invalid_argument("FeatureStack: items differ in length");
    }
  }

  Array sample_mean() const {
    validate();
    Array m(length(), 0.0);
    for (const auto& it : items)
      for (std::size_t k = 0; k < m.size(); ++k) m[k] += it[k];
    for (auto& v : m) v /= static_cast<double>(items.size());
    return m;
  }

  /// Unbiased (n-1) elementwise standard deviation; zeros for n = 1.
  Array sample_std() const {
    const Array m = sample_mean();
    Array s(length(), 0.0);
    if (items.size() < 2) return s;
    for (const auto& it : items)
      for (std::size_t k = 0; k < s.size(); ++k) s[k] += (it[k] - m[k]) * (it[k] - m[k]);
    for (auto& v : s) v = std::sqrt(v / static_cast<double>(items.size() - 1));
    return s;
  }
};

struct GaussianPrior {
  Array t0;
  double sigma0 = 1.0;  // prior std
  double sigma = 1.0;   // observation noise std

  void validate() const {
    if (!(sigma0 > 0.0) || !(sigma > 0.0)) throw std::invalid_argument("GaussianPrior: sigma0 and sigma must be > 0");
  }
};

enum class PoolMethod { mean, median };

/// Elementwise mean or median of the stack. Even-sized medians average the
/// two central order statistics.
inline Array pool_stack(const FeatureStack& stack, PoolMethod method) {
  stack.validate();
  if (method == PoolMethod::mean) return stack.sample_mean();
  const std::size_t n = stack.size();
  Array out(stack.length());
  std::vector<double> column(n);
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = stack.items[i][k];
    std::sort(column.begin(), column.end());
    out[k] = (n % 2 == 1) ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
  }
  return out;
}

struct Posterior {
  Array mean;
  double variance = 0.0;
};

/// Conjugate Gaussian update of prior (t0, sigma0^2) with n observations of
/// noise sigma:
///   mean     = (sigma^2 t0 + sigma0^2 sum t_i) / (sigma^2 + n sigma0^2)
///   variance = sigma^2 sigma0^2 / (sigma^2 + n sigma0^2)
inline Posterior bayes_update(const GaussianPrior& prior, std::span<const Array> observations) {
  prior.validate();
  const double s2 = prior.sigma * prior.sigma;
  const double s02 = prior.sigma0 * prior.sigma0;
  const double n = static_cast<double>(observations.size());
  Array total(prior.t0.size(), 0.0);
  for (const auto& obs : observations) {
    if (obs.size() != prior.t0.size()) {
      throw std::invalid_argument("bayes_update: observation length " + std::to_string(obs.size()) +
                                  " != prior length " + std::to_string(prior.t0.size()));
    }
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += obs[k];
  }
  const double den = s2 + n * s02;
  Posterior post;
  post.mean.resize(prior.t0.size());
  for (std::size_t k = 0; k < total.size(); ++k) post.mean[k] = (s2 * prior.t0[k] + s02 * total[k]) / den;
  post.variance = s2 * s02 / den;
  return post;
}

/// Applies bayes_update one observation at a time, feeding each posterior
/// back in as the next prior.
inline Posterior bayes_update_sequential(const GaussianPrior& prior, std::span<const Array> observations) {
  Posterior post{prior.t0, prior.sigma0 * prior.sigma0};
  for (const auto& obs : observations) {
    const GaussianPrior step{post.mean, std::sqrt(post.variance), prior.sigma};
    post = bayes_update(step, std::span<const Array>(&obs, 1));
  }
  return post;
}

struct StackingRow {
  std::size_t n = 0;
  double sigma = 0.0;
  std::size_t trials = 0;
  double empirical_std = 0.0;
  double predicted_std = 0.0;
  double ratio = 0.0;
};

/// Monte Carlo of the pooled-mean spread: for each n, `trials` stacks of n
/// N(0, sigma) draws are mean-pooled and the sample std of the pooled values
/// is compared with sigma / sqrt(n). Trial t of size n draws from its own
/// substream, so results do not depend on evaluation order.
inline std::vector<StackingRow> stacking_law_mc(double sigma, std::span<const std::size_t> n_values,
                                                std::size_t trials, const Rng& rng,
                                                bool skip_sqrt_n_division = false) {
  if (trials < 1000) throw std::invalid_argument("stacking_law_mc: trials must be >= 1000");
  if (!(sigma > 0.0)) throw std::invalid_argument("stacking_law_mc: sigma must be > 0");
  std::vector<StackingRow> rows;
  for (const std::size_t n : n_values) {
    if (n == 0) throw std::invalid_argument("stacking_law_mc: n must be >= 1");
    double sum = 0.0, sum_sq = 0.0;
    const Rng per_n = rng.substream(n);
    for (std::size_t t = 0; t < trials; ++t) {
      Rng r = per_n.substream(t);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += r.normal(0.0, sigma);
      const double pooled = acc / static_cast<double>(n);
      sum += pooled;
      sum_sq += pooled * pooled;
    }
    const double m = sum / static_cast<double>(trials);
    const double var = (sum_sq - static_cast<double>(trials) * m * m) / static_cast<double>(trials - 1);
    StackingRow row;
    row.n = n;
    row.sigma = sigma;
    row.trials = trials;
    row.empirical_std = std::sqrt(std::max(var, 0.0));
    row.predicted_std = skip_sqrt_n_division ? sigma : sigma / std::sqrt(static_cast<double>(n));
    row.ratio = row.empirical_std / row.predicted_std;
    rows.push_back(row);
  }
  return rows;
}

inline double l1_distance(const Array& a, const Array& b) {
  if (a.size() != b.size()) throw std::invalid_argument("l1_distance: length mismatch");
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += std::abs(a[k] - b[k]);
  return d;
}

struct BoundResult {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// Checks that the L1 distance from member i to the posterior mean is at
/// most the weighted sum
///   sigma^2/(sigma^2+n sigma0^2) |t_i - t0| + sigma0^2/(sigma^2+n sigma0^2) sum_{j!=i} |t_i - t_j|.
inline BoundResult bound_check(const FeatureStack& stack, const GaussianPrior& prior, std::size_t i) {
  stack.validate();
  prior.validate();
  if (i >= stack.size()) {
    throw std::out_of_range("bound_check: index " + std::to_string(i) + " >= stack size " +
                            std::to_string(stack.size()));
  }
  const Posterior post = bayes_update(prior, stack.items);
  const double s2 = prior.sigma * prior.sigma;
  const double s02 = prior.sigma0 * prior.sigma0;
  const double den = s2 + static_cast<double>(stack.size()) * s02;
  const Array& ti = stack.items[i];
  BoundResult r;
  r.lhs = l1_distance(ti, post.mean);
  double pair_sum = 0.0;
  for (std::size_t j = 0; j < stack.size(); ++j)
    if (j != i) pair_sum += l1_distance(ti, stack.items[j]);
  r.rhs = s2 / den * l1_distance(ti, prior.t0) + s02 / den * pair_sum;
  r.holds = r.lhs <= r.rhs + 1e-9;
  return r;
}

}  // namespace s2s2::stacklab
