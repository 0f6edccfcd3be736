#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "s2s2/diffcore/rng.hpp"
#include "s2s2/diffcore/tensor.hpp"

namespace s2s2 {

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample of this many per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares backward() against central differences of `f` with respect to
/// every tensor in `params`. The relative error of one coordinate is
/// |analytic - numeric| / max(1, |numeric|).
template <class F>
GradCheckResult grad_check_report(F&& f, std::span<Tensor<double>> params, const GradCheckOptions& opts = {}) {
  if (!(opts.step > 0.0)) throw std::invalid_argument("grad_check: step must be > 0");
  for (auto& p : params) {
    if (!p.requires_grad()) throw std::invalid_argument("grad_check: parameter does not require grad");
    p.zero_grad();
  }
  Tensor<double> loss = f();
  backward(loss);

  GradCheckResult result;
  Rng rng(opts.sample_seed, Stream::verify);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_tensor != 0 && coords.size() > opts.max_coords_per_tensor) {
      for (std::size_t i = 0; i < opts.max_coords_per_tensor; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(opts.max_coords_per_tensor);
    }
    auto values = p.mutable_data();
    for (const std::size_t i : coords) {
      const double x0 = values[i];
      values[i] = x0 + opts.step;
      const double fp = f().item();
      values[i] = x0 - opts.step;
      const double fm = f().item();
      values[i] = x0;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++result.coords_checked;
      if (result.coords_checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = t;
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

template <class F>
double grad_check(F&& f, std::span<Tensor<double>> params, double step = 1e-5) {
  return grad_check_report(std::forward<F>(f), params, GradCheckOptions{step, 0, 0}).max_rel_error;
}

}  // namespace s2s2
