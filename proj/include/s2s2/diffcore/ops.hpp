#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2s2/diffcore/tensor.hpp"

namespace s2s2 {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

// Unfolds [C,H,W] into a (C*k*k) × (Ho*Wo) patch matrix (stride 1).
template <class T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t pad,
            std::size_t Ho, std::size_t Wo, T* cols) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * Ho * Wo;
        // Valid output columns satisfy 0 <= ox + kx - pad < W.
        const std::size_t lo = std::min(Wo, pad > kx ? pad - kx : 0);
        const std::size_t hi = std::min(Wo, W + pad > kx ? W + pad - kx : 0);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          T* dst = row + oy * Wo;
          const std::size_t iy1 = oy + ky;
          if (iy1 < pad || iy1 - pad >= H || lo >= hi) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + (iy1 - pad)) * W;
          const std::size_t shift = kx - std::min(kx, pad), back = pad - std::min(kx, pad);
          std::fill(dst, dst + lo, T(0));
          // ox >= lo guarantees ox + kx >= pad.
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox + shift - back];
          std::fill(dst + hi, dst + Wo, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t pad,
                std::size_t Ho, std::size_t Wo, T* x) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * Ho * Wo;
        const std::size_t lo = std::min(Wo, pad > kx ? pad - kx : 0);
        const std::size_t hi = std::min(Wo, W + pad > kx ? W + pad - kx : 0);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::size_t iy1 = oy + ky;
          if (iy1 < pad || iy1 - pad >= H) continue;
          const T* src = row + oy * Wo;
          T* dst = x + (c * H + (iy1 - pad)) * W;
          const std::size_t shift = kx - std::min(kx, pad), back = pad - std::min(kx, pad);
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox + shift - back] += src[ox];
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of a [C_in,H,W] input with a [C_out,C_in,k,k] kernel
/// plus a per-output-channel bias. Output is [C_out, H+2p-k+1, W+2p-k+1].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t padding) {
  detail::require_rank(input, 3, "conv2d(input)");
  detail::require_rank(kernel, 4, "conv2d(kernel)");
  detail::require_rank(bias, 1, "conv2d(bias)");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t O = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != C || kernel.dim(3) != k) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                                shape_str(input.shape()));
  }
  if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (bias.dim(0) != O) throw std::invalid_argument("conv2d: bias length != output channels");
  if (H + 2 * padding < k || W + 2 * padding < k) throw std::invalid_argument("conv2d: kernel larger than padded input");
  const std::size_t Ho = H + 2 * padding - k + 1, Wo = W + 2 * padding - k + 1;
  const std::size_t P = Ho * Wo, R = C * k * k;

  using Mat = detail::RowMat<T>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;

  // A 1x1 kernel without padding reads the input directly.
  const bool direct = (k == 1 && padding == 0);
  Mat cols;
  if (!direct) {
    cols.resize(static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
    detail::im2col(input.data().data(), C, H, W, k, padding, Ho, Wo, cols.data());
  }
  const CMap colsv(direct ? input.data().data() : cols.data(), static_cast<Eigen::Index>(R),
                   static_cast<Eigen::Index>(P));
  const CMap wm(kernel.data().data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(R));

  std::vector<T> out(O * P);
  Map om(out.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
  om.noalias() = wm * colsv;
  for (std::size_t o = 0; o < O; ++o) {
    const T b = bias[o];
    T* row = out.data() + o * P;
    for (std::size_t i = 0; i < P; ++i) row[i] += b;
  }

  auto xn = input.node(), wn = kernel.node(), bn = bias.node();
  return Tensor<T>::from_op(
      Shape{O, Ho, Wo}, std::move(out), {xn, wn, bn}, "conv2d",
      [xn = xn.get(), wn = wn.get(), bn = bn.get(), cols = std::move(cols), direct, C, H, W, k, padding, Ho, Wo, O, P,
       R](detail::Node<T>& self) {
        const CMap g(self.grad.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
        const CMap colsv(direct ? xn->value.data() : cols.data(), static_cast<Eigen::Index>(R),
                         static_cast<Eigen::Index>(P));
        if (wn->requires_grad) {
          Map gw(wn->grad_buffer().data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(R));
          gw.noalias() += g * colsv.transpose();
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_buffer();
          for (std::size_t o = 0; o < O; ++o) {
            T s = 0;
            const T* row = self.grad.data() + o * P;
            for (std::size_t i = 0; i < P; ++i) s += row[i];
            gb[o] += s;
          }
        }
        if (xn->requires_grad) {
          const CMap wm(wn->value.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(R));
          if (direct) {
            Map gx(xn->grad_buffer().data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
            gx.noalias() += wm.transpose() * g;
          } else {
            Mat gcols = wm.transpose() * g;
            detail::col2im_add(gcols.data(), C, H, W, k, padding, Ho, Wo, xn->grad_buffer().data());
          }
        }
      });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto xn = x.node();
  return Tensor<T>::from_op(x.shape(), std::move(out), {xn}, "relu", [xn = xn.get()](detail::Node<T>& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xn->value[i] > T(0)) gx[i] += self.grad[i];
  });
}

/// [C,H,W] -> [C,2H,2W]; each output cell copies its source cell.
template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  detail::require_rank(x, 3, "upsample_nearest2x");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t H2 = 2 * H, W2 = 2 * W;
  std::vector<T> out(C * H2 * W2);
  const T* src = x.data().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H2; ++y)
      for (std::size_t xx = 0; xx < W2; ++xx) out[(c * H2 + y) * W2 + xx] = src[(c * H + y / 2) * W + xx / 2];
  auto xn = x.node();
  return Tensor<T>::from_op(Shape{C, H2, W2}, std::move(out), {xn}, "upsample_nearest2x",
                            [xn = xn.get(), C, H, W](detail::Node<T>& self) {
                              auto& gx = xn->grad_buffer();
                              const std::size_t H2 = 2 * H, W2 = 2 * W;
                              for (std::size_t c = 0; c < C; ++c)
                                for (std::size_t y = 0; y < H2; ++y)
                                  for (std::size_t xx = 0; xx < W2; ++xx)
                                    gx[(c * H + y / 2) * W + xx / 2] += self.grad[(c * H2 + y) * W2 + xx];
                            });
}

/// 2×2 max pooling with stride 2. Ties go to the first cell in row-major
/// order within the window.
template <class T>
Tensor<T> maxpool2x(const Tensor<T>& x) {
  detail::require_rank(x, 3, "maxpool2x");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % 2 != 0 || W % 2 != 0) {
    throw std::invalid_argument("maxpool2x: spatial dims must be even, got " + shape_str(x.shape()));
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  std::vector<T> out(C * Ho * Wo);
  std::vector<std::size_t> argmax(out.size());
  const T* src = x.data().data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (c * H + 2 * oy) * W + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * H + 2 * oy + dy) * W + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (c * Ho + oy) * Wo + ox;
        out[o] = src[best];
        argmax[o] = best;
      }
    }
  }
  auto xn = x.node();
  return Tensor<T>::from_op(Shape{C, Ho, Wo}, std::move(out), {xn}, "maxpool2x",
                            [xn = xn.get(), argmax = std::move(argmax)](detail::Node<T>& self) {
                              auto& gx = xn->grad_buffer();
                              for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
                            });
}

/// Stacks [Ca,H,W] and [Cb,H,W] into [Ca+Cb,H,W].
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 3, "concat_channels(a)");
  detail::require_rank(b, 3, "concat_channels(b)");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw std::invalid_argument("concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  std::vector<T> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = a.numel();
  auto an = a.node(), bn = b.node();
  return Tensor<T>::from_op(Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out), {an, bn},
                            "concat_channels", [an = an.get(), bn = bn.get(), na](detail::Node<T>& self) {
                              if (an->requires_grad) {
                                auto& ga = an->grad_buffer();
                                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                              }
                              if (bn->requires_grad) {
                                auto& gb = bn->grad_buffer();
                                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[na + i];
                              }
                            });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {an, bn}, "add",
                            [an = an.get(), bn = bn.get()](detail::Node<T>& self) {
                              for (auto* n : {an, bn}) {
                                if (!n->requires_grad) continue;
                                auto& g = n->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                              }
                            });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  auto an = a.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {an}, "scale",
                            [an = an.get(), factor](detail::Node<T>& self) {
                              auto& g = an->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
                            });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (const T v : a.data()) s += v;
  auto an = a.node();
  return Tensor<T>::from_op(Shape{1}, std::vector<T>{s}, {an}, "sum", [an = an.get()](detail::Node<T>& self) {
    auto& g = an->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Elementwise product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {an, bn}, "mul",
                            [an = an.get(), bn = bn.get()](detail::Node<T>& self) {
                              if (an->requires_grad) {
                                auto& g = an->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
                              }
                              if (bn->requires_grad) {
                                auto& g = bn->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
                              }
                            });
}

}  // namespace s2s2
