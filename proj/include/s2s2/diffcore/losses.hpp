#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2s2/diffcore/ops.hpp"
#include "s2s2/diffcore/tensor.hpp"
#include "s2s2/types.hpp"

namespace s2s2 {

namespace detail {

template <class T>
void require_mask_matches(const Tensor<T>& logits, const SegmentationMask& target, const char* op) {
  require_rank(logits, 3, op);
  if (logits.dim(1) != target.height || logits.dim(2) != target.width || target.labels.size() != target.size()) {
    throw std::invalid_argument(std::string(op) + ": logits " + shape_str(logits.shape()) + " vs mask " +
                                std::to_string(target.height) + "x" + std::to_string(target.width));
  }
  const std::size_t K = logits.dim(0);
  for (const auto l : target.labels) {
    if (l >= K) {
      throw std::invalid_argument(std::string(op) + ": target class " + std::to_string(l) + " >= K=" +
                                  std::to_string(K));
    }
  }
}

// Channel softmax of [K, P] data, max-subtracted.
template <class T>
std::vector<T> softmax_kp(const T* z, std::size_t K, std::size_t P) {
  std::vector<T> p(K * P);
  for (std::size_t i = 0; i < P; ++i) {
    T m = z[i];
    for (std::size_t c = 1; c < K; ++c) m = std::max(m, z[c * P + i]);
    T s = 0;
    for (std::size_t c = 0; c < K; ++c) {
      const T e = std::exp(z[c * P + i] - m);
      p[c * P + i] = e;
      s += e;
    }
    for (std::size_t c = 0; c < K; ++c) p[c * P + i] /= s;
  }
  return p;
}

}  // namespace detail

/// Softmax over the channel axis of [K,H,W] logits.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  detail::require_rank(logits, 3, "softmax_channels");
  const std::size_t K = logits.dim(0), P = logits.dim(1) * logits.dim(2);
  std::vector<T> p = detail::softmax_kp(logits.data().data(), K, P);
  auto ln = logits.node();
  return Tensor<T>::from_op(logits.shape(), p, {ln}, "softmax_channels",
                            [ln = ln.get(), p, K, P](detail::Node<T>& self) {
                              auto& gz = ln->grad_buffer();
                              for (std::size_t i = 0; i < P; ++i) {
                                T dot = 0;
                                for (std::size_t c = 0; c < K; ++c) dot += self.grad[c * P + i] * p[c * P + i];
                                for (std::size_t c = 0; c < K; ++c)
                                  gz[c * P + i] += p[c * P + i] * (self.grad[c * P + i] - dot);
                              }
                            });
}

/// Mean over pixels of -log softmax(logits)[target]. Scalar output.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const SegmentationMask& target) {
  detail::require_mask_matches(logits, target, "softmax_cross_entropy");
  const std::size_t K = logits.dim(0), P = target.size();
  const T* z = logits.data().data();
  std::vector<T> p = detail::softmax_kp(z, K, P);
  T loss = 0;
  for (std::size_t i = 0; i < P; ++i) {
    // log-sum-exp form keeps saturated pixels exact instead of log(1 - tiny).
    T m = z[i];
    for (std::size_t c = 1; c < K; ++c) m = std::max(m, z[c * P + i]);
    T s = 0;
    for (std::size_t c = 0; c < K; ++c) s += std::exp(z[c * P + i] - m);
    loss += m + std::log(s) - z[target.labels[i] * P + i];
  }
  loss /= static_cast<T>(P);
  auto ln = logits.node();
  return Tensor<T>::from_op(Shape{1}, std::vector<T>{loss}, {ln}, "softmax_cross_entropy",
                            [ln = ln.get(), p = std::move(p), labels = target.labels, K, P](detail::Node<T>& self) {
                              auto& gz = ln->grad_buffer();
                              const T g = self.grad[0] / static_cast<T>(P);
                              for (std::size_t c = 0; c < K; ++c)
                                for (std::size_t i = 0; i < P; ++i)
                                  gz[c * P + i] += g * (p[c * P + i] - (labels[i] == c ? T(1) : T(0)));
                            });
}

/// 1 - mean over classes present in `target` of the soft Dice between the
/// class probability map and the class indicator.
template <class T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const SegmentationMask& target) {
  detail::require_mask_matches(probs, target, "soft_dice_loss");
  const std::size_t K = probs.dim(0), P = target.size();
  const T* p = probs.data().data();
  std::vector<T> inter(K, T(0)), psum(K, T(0));
  std::vector<std::size_t> count(K, 0);
  for (std::size_t i = 0; i < P; ++i) ++count[target.labels[i]];
  for (std::size_t c = 0; c < K; ++c) {
    if (count[c] == 0) continue;
    for (std::size_t i = 0; i < P; ++i) {
      psum[c] += p[c * P + i];
      if (target.labels[i] == c) inter[c] += p[c * P + i];
    }
  }
  std::size_t present = 0;
  T dice_sum = 0;
  for (std::size_t c = 0; c < K; ++c) {
    if (count[c] == 0) continue;
    ++present;
    dice_sum += T(2) * inter[c] / (psum[c] + static_cast<T>(count[c]));
  }
  const T loss = T(1) - dice_sum / static_cast<T>(present);
  auto pn = probs.node();
  return Tensor<T>::from_op(
      Shape{1}, std::vector<T>{loss}, {pn}, "soft_dice_loss",
      [pn = pn.get(), labels = target.labels, inter = std::move(inter), psum = std::move(psum),
       count = std::move(count), present, K, P](detail::Node<T>& self) {
        auto& gp = pn->grad_buffer();
        const T scale_factor = -self.grad[0] / static_cast<T>(present);
        for (std::size_t c = 0; c < K; ++c) {
          if (count[c] == 0) continue;
          const T den = psum[c] + static_cast<T>(count[c]);
          const T d_other = -T(2) * inter[c] / (den * den);
          const T d_in = T(2) / den + d_other;
          for (std::size_t i = 0; i < P; ++i) gp[c * P + i] += scale_factor * (labels[i] == c ? d_in : d_other);
        }
      });
}

namespace detail {

// Cosine distance between the C-vectors at each of L locations of two
// [C, L]-laid-out arrays (channel-major, as in [C,h,w]).
template <class T>
Tensor<T> cosine_distance_cl(const Tensor<T>& a, const Tensor<T>& b, std::size_t C, std::size_t L, Shape out_shape,
                             T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("cosine_distance: eps must be > 0");
  std::vector<T> dot(L, T(0)), na(L, T(0)), nb(L, T(0));
  const T* x = a.data().data();
  const T* y = b.data().data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t l = 0; l < L; ++l) {
      const T u = x[c * L + l], v = y[c * L + l];
      dot[l] += u * v;
      na[l] += u * u;
      nb[l] += v * v;
    }
  }
  std::vector<T> out(L);
  for (std::size_t l = 0; l < L; ++l) {
    na[l] = std::sqrt(na[l]);
    nb[l] = std::sqrt(nb[l]);
    out[l] = std::clamp(T(1) - dot[l] / (std::max(na[l], eps) * std::max(nb[l], eps)), T(0), T(2));
  }
  auto an = a.node(), bn = b.node();
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), {an, bn}, "cosine_distance",
      [an = an.get(), bn = bn.get(), dot = std::move(dot), na = std::move(na), nb = std::move(nb), C, L,
       eps](detail::Node<T>& self) {
        // d/du [ -dot / (ma*mb) ] = -v/(ma*mb) + dot/(ma^2*mb) * dma/du, dma/du = u/|u| when |u| > eps.
        const T* x = an->value.data();
        const T* y = bn->value.data();
        T* gx = an->requires_grad ? an->grad_buffer().data() : nullptr;
        T* gy = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
        for (std::size_t l = 0; l < L; ++l) {
          const T g = self.grad[l];
          const T ma = std::max(na[l], eps), mb = std::max(nb[l], eps);
          const T inv = T(1) / (ma * mb);
          const T ka = na[l] > eps ? dot[l] * inv / (ma * na[l]) : T(0);
          const T kb = nb[l] > eps ? dot[l] * inv / (mb * nb[l]) : T(0);
          for (std::size_t c = 0; c < C; ++c) {
            const T u = x[c * L + l], v = y[c * L + l];
            if (gx) gx[c * L + l] += g * (-v * inv + ka * u);
            if (gy) gy[c * L + l] += g * (-u * inv + kb * v);
          }
        }
      });
}

}  // namespace detail

/// 1 - <a,b> / (max(|a|,eps) * max(|b|,eps)) for two vectors. Scalar in [0,2].
template <class T>
Tensor<T> cosine_distance(const Tensor<T>& a, const Tensor<T>& b, T eps = T(1e-8)) {
  detail::require_rank(a, 1, "cosine_distance");
  detail::require_same_shape(a, b, "cosine_distance");
  return detail::cosine_distance_cl(a, b, a.numel(), 1, Shape{1}, eps);
}

/// Per-location cosine distance between the channel vectors of two [C,h,w]
/// feature maps. Output is [h,w].
template <class T>
Tensor<T> cosine_distance_map(const Tensor<T>& a, const Tensor<T>& b, T eps = T(1e-8)) {
  detail::require_rank(a, 3, "cosine_distance_map");
  detail::require_same_shape(a, b, "cosine_distance_map");
  return detail::cosine_distance_cl(a, b, a.dim(0), a.dim(1) * a.dim(2), Shape{a.dim(1), a.dim(2)}, eps);
}

}  // namespace s2s2
