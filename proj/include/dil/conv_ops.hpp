#pragma once

#include <limits>
#include <string>
#include <vector>

#include "dil/tensor.hpp"

namespace dil {

namespace detail {

// Copies an NCHW tensor into a zero-padded scratch buffer.
template <typename T>
inline std::vector<T> pad_nchw(std::span<const T> in, int n, int c, int h,
                               int w, int pad) {
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  std::vector<T> out(static_cast<size_t>(n) * c * hp * wp, T(0));
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const T* src = in.data() + (static_cast<size_t>(ni) * c + ci) * h * w;
      T* dst = out.data() + ((static_cast<size_t>(ni) * c + ci) * hp + pad) * wp + pad;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) dst[x] = src[x];
        src += w;
        dst += wp;
      }
    }
  }
  return out;
}

}  // namespace detail

// 2-D convolution (cross-correlation), NCHW input against an OIKhKw kernel,
// implicit zero padding, square stride.
template <typename T>
inline Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                        int stride = 1, int padding = 0) {
  if (input.ndim() != 4) throw AutogradError("conv2d: input must be NCHW");
  if (kernel.ndim() != 4) throw AutogradError("conv2d: kernel must be OIKhKw");
  if (stride < 1) throw AutogradError("conv2d: stride must be >= 1");
  if (padding < 0) throw AutogradError("conv2d: padding must be >= 0");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int o = kernel.dim(0), i = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (c != i) {
    throw AutogradError("conv2d: input has " + std::to_string(c) +
                        " channels but kernel expects " + std::to_string(i));
  }
  const int hp = h + 2 * padding, wp = w + 2 * padding;
  if (hp < kh || wp < kw) {
    throw AutogradError("conv2d: kernel larger than padded input");
  }
  const int ho = (hp - kh) / stride + 1;
  const int wo = (wp - kw) / stride + 1;

  const std::vector<T> padded = detail::pad_nchw<T>(input.data(), n, c, h, w, padding);
  std::vector<T> out(static_cast<size_t>(n) * o * ho * wo, T(0));
  const T* kdata = kernel.data().data();
  for (int ni = 0; ni < n; ++ni) {
    for (int oi = 0; oi < o; ++oi) {
      T* out_plane = out.data() + (static_cast<size_t>(ni) * o + oi) * ho * wo;
      for (int ci = 0; ci < c; ++ci) {
        const T* in_plane = padded.data() + (static_cast<size_t>(ni) * c + ci) * hp * wp;
        const T* kplane = kdata + (static_cast<size_t>(oi) * i + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T kv = kplane[ky * kw + kx];
            for (int oy = 0; oy < ho; ++oy) {
              const T* in_row = in_plane + (oy * stride + ky) * wp + kx;
              T* out_row = out_plane + oy * wo;
              for (int ox = 0; ox < wo; ++ox) {
                out_row[ox] += kv * in_row[ox * stride];
              }
            }
          }
        }
      }
    }
  }

  auto pin = input.impl();
  auto pker = kernel.impl();
  const int cap_stride = stride, cap_pad = padding;
  return detail::make_result<T>(
      {n, o, ho, wo}, std::move(out), "conv2d", {input, kernel},
      [pin, pker, n, c, h, w, o, i, kh, kw, ho, wo, hp, wp, cap_stride,
       cap_pad](const TensorImpl<T>& res) {
        const T* gout = res.grad.data();
        const std::vector<T> padded_in =
            detail::pad_nchw<T>(std::span<const T>(pin->data), n, c, h, w, cap_pad);
        if (pin->requires_grad) {
          std::vector<T> dpad(static_cast<size_t>(n) * c * hp * wp, T(0));
          for (int ni = 0; ni < n; ++ni) {
            for (int oi = 0; oi < o; ++oi) {
              const T* g_plane = gout + (static_cast<size_t>(ni) * o + oi) * ho * wo;
              for (int ci = 0; ci < c; ++ci) {
                T* d_plane = dpad.data() + (static_cast<size_t>(ni) * c + ci) * hp * wp;
                const T* kplane =
                    pker->data.data() + (static_cast<size_t>(oi) * i + ci) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                  for (int kx = 0; kx < kw; ++kx) {
                    const T kv = kplane[ky * kw + kx];
                    for (int oy = 0; oy < ho; ++oy) {
                      const T* g_row = g_plane + oy * wo;
                      T* d_row = d_plane + (oy * cap_stride + ky) * wp + kx;
                      for (int ox = 0; ox < wo; ++ox) {
                        d_row[ox * cap_stride] += kv * g_row[ox];
                      }
                    }
                  }
                }
              }
            }
          }
          // Crop the padded gradient back to the input extent.
          std::vector<T> din(pin->data.size(), T(0));
          for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < c; ++ci) {
              const T* src = dpad.data() +
                             ((static_cast<size_t>(ni) * c + ci) * hp + cap_pad) * wp +
                             cap_pad;
              T* dst = din.data() + (static_cast<size_t>(ni) * c + ci) * h * w;
              for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) dst[x] = src[x];
                src += wp;
                dst += w;
              }
            }
          }
          detail::accumulate_grad<T>(*pin, din, "conv2d");
        }
        if (pker->requires_grad) {
          std::vector<T> dker(pker->data.size(), T(0));
          for (int oi = 0; oi < o; ++oi) {
            for (int ci = 0; ci < c; ++ci) {
              T* dk_plane = dker.data() + (static_cast<size_t>(oi) * i + ci) * kh * kw;
              for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                  T acc = T(0);
                  for (int ni = 0; ni < n; ++ni) {
                    const T* g_plane =
                        gout + (static_cast<size_t>(ni) * o + oi) * ho * wo;
                    const T* in_plane =
                        padded_in.data() + (static_cast<size_t>(ni) * c + ci) * hp * wp;
                    for (int oy = 0; oy < ho; ++oy) {
                      const T* g_row = g_plane + oy * wo;
                      const T* in_row = in_plane + (oy * cap_stride + ky) * wp + kx;
                      for (int ox = 0; ox < wo; ++ox) {
                        acc += g_row[ox] * in_row[ox * cap_stride];
                      }
                    }
                  }
                  dk_plane[ky * kw + kx] = acc;
                }
              }
            }
          }
          detail::accumulate_grad<T>(*pker, dker, "conv2d");
        }
      });
}

// Adds a per-channel bias to an NCHW tensor.
template <typename T>
inline Tensor<T> conv_bias(const Tensor<T>& input, const Tensor<T>& bias) {
  if (input.ndim() != 4) throw AutogradError("conv_bias: input must be NCHW");
  if (bias.ndim() != 1 || bias.dim(0) != input.dim(1)) {
    throw AutogradError("conv_bias: bias length must equal the channel count");
  }
  const int n = input.dim(0), c = input.dim(1);
  const int plane = input.dim(2) * input.dim(3);
  std::vector<T> out(input.numel());
  const auto din = input.data();
  const auto db = bias.data();
  size_t idx = 0;
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const T b = db[ci];
      for (int p = 0; p < plane; ++p, ++idx) out[idx] = din[idx] + b;
    }
  }
  auto pin = input.impl();
  auto pb = bias.impl();
  return detail::make_result<T>(
      input.shape(), std::move(out), "conv_bias", {input, bias},
      [pin, pb, n, c, plane](const TensorImpl<T>& res) {
        if (pin->requires_grad) {
          detail::accumulate_grad<T>(*pin, res.grad, "conv_bias");
        }
        if (pb->requires_grad) {
          std::vector<T> dbias(static_cast<size_t>(c), T(0));
          size_t idx = 0;
          for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < c; ++ci) {
              T acc = T(0);
              for (int p = 0; p < plane; ++p, ++idx) acc += res.grad[idx];
              dbias[ci] += acc;
            }
          }
          detail::accumulate_grad<T>(*pb, dbias, "conv_bias");
        }
      });
}

// Non-overlapping k-by-k average pooling (stride k, floor semantics).
template <typename T>
inline Tensor<T> avg_pool2d(const Tensor<T>& input, int k) {
  if (input.ndim() != 4) throw AutogradError("avg_pool2d: input must be NCHW");
  if (k < 1) throw AutogradError("avg_pool2d: window must be >= 1");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int ho = h / k, wo = w / k;
  if (ho < 1 || wo < 1) {
    throw AutogradError("avg_pool2d: spatial extent smaller than the window");
  }
  std::vector<T> out(static_cast<size_t>(n) * c * ho * wo);
  const auto din = input.data();
  const T inv = T(1) / static_cast<T>(k * k);
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const T* plane = din.data() + (static_cast<size_t>(ni) * c + ci) * h * w;
      T* out_plane = out.data() + (static_cast<size_t>(ni) * c + ci) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          T acc = T(0);
          for (int dy = 0; dy < k; ++dy) {
            const T* row = plane + (oy * k + dy) * w + ox * k;
            for (int dx = 0; dx < k; ++dx) acc += row[dx];
          }
          out_plane[oy * wo + ox] = acc * inv;
        }
      }
    }
  }
  auto pin = input.impl();
  return detail::make_result<T>(
      {n, c, ho, wo}, std::move(out), "avg_pool2d", {input},
      [pin, n, c, h, w, ho, wo, k, inv](const TensorImpl<T>& res) {
        std::vector<T> din(pin->data.size(), T(0));
        for (int ni = 0; ni < n; ++ni) {
          for (int ci = 0; ci < c; ++ci) {
            const T* g_plane =
                res.grad.data() + (static_cast<size_t>(ni) * c + ci) * ho * wo;
            T* d_plane = din.data() + (static_cast<size_t>(ni) * c + ci) * h * w;
            for (int oy = 0; oy < ho; ++oy) {
              for (int ox = 0; ox < wo; ++ox) {
                const T g = g_plane[oy * wo + ox] * inv;
                for (int dy = 0; dy < k; ++dy) {
                  T* row = d_plane + (oy * k + dy) * w + ox * k;
                  for (int dx = 0; dx < k; ++dx) row[dx] += g;
                }
              }
            }
          }
        }
        detail::accumulate_grad<T>(*pin, din, "avg_pool2d");
      });
}

// Per-channel global pooling of an NCHW tensor: mean over the spatial extent
// plus max over the spatial extent (the sum of the two statistics), yielding
// one value per (sample, channel). The max ties break to the first position
// in row-major order.
template <typename T>
inline Tensor<T> global_pool(const Tensor<T>& input) {
  if (input.ndim() != 4) throw AutogradError("global_pool: input must be NCHW");
  const int n = input.dim(0), c = input.dim(1);
  const int plane = input.dim(2) * input.dim(3);
  if (plane < 1) throw AutogradError("global_pool: empty spatial extent");
  std::vector<T> out(static_cast<size_t>(n) * c);
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(n) * c);
  const auto din = input.data();
  for (size_t nc = 0; nc < out.size(); ++nc) {
    const T* p = din.data() + nc * plane;
    T total = T(0);
    T best = p[0];
    int best_at = 0;
    for (int j = 0; j < plane; ++j) {
      total += p[j];
      if (p[j] > best) {
        best = p[j];
        best_at = j;
      }
    }
    (*argmax)[nc] = best_at;
    out[nc] = total / static_cast<T>(plane) + best;
  }
  auto pin = input.impl();
  return detail::make_result<T>(
      {n, c}, std::move(out), "global_pool", {input},
      [pin, plane, argmax](const TensorImpl<T>& res) {
        std::vector<T> din(pin->data.size(), T(0));
        const T inv = T(1) / static_cast<T>(plane);
        for (size_t nc = 0; nc < res.grad.size(); ++nc) {
          const T g = res.grad[nc];
          T* d = din.data() + nc * plane;
          const T spread = g * inv;
          for (int j = 0; j < plane; ++j) d[j] += spread;
          d[(*argmax)[nc]] += g;
        }
        detail::accumulate_grad<T>(*pin, din, "global_pool");
      });
}

// Column gather over a [N, C] tensor. indices[k] selects column k of the
// result; -1 yields a zero column (used for classes absent from the base
// head). Gradients scatter-add back into the gathered columns.
template <typename T>
inline Tensor<T> gather_columns(const Tensor<T>& input,
                                const std::vector<int>& indices) {
  if (input.ndim() != 2) throw AutogradError("gather_columns: input must be 2-D");
  const int n = input.dim(0), c = input.dim(1);
  const int k = static_cast<int>(indices.size());
  if (k < 1) throw AutogradError("gather_columns: empty index list");
  for (int j : indices) {
    if (j < -1 || j >= c) {
      throw AutogradError("gather_columns: index " + std::to_string(j) +
                          " out of range [-1, " + std::to_string(c) + ")");
    }
  }
  std::vector<T> out(static_cast<size_t>(n) * k, T(0));
  const auto din = input.data();
  for (int ni = 0; ni < n; ++ni) {
    const T* row = din.data() + static_cast<size_t>(ni) * c;
    T* orow = out.data() + static_cast<size_t>(ni) * k;
    for (int j = 0; j < k; ++j) {
      if (indices[j] >= 0) orow[j] = row[indices[j]];
    }
  }
  auto pin = input.impl();
  auto idx = std::make_shared<std::vector<int>>(indices);
  return detail::make_result<T>(
      {n, k}, std::move(out), "gather_columns", {input},
      [pin, idx, n, c, k](const TensorImpl<T>& res) {
        std::vector<T> din(pin->data.size(), T(0));
        for (int ni = 0; ni < n; ++ni) {
          const T* grow = res.grad.data() + static_cast<size_t>(ni) * k;
          T* drow = din.data() + static_cast<size_t>(ni) * c;
          for (int j = 0; j < k; ++j) {
            if ((*idx)[j] >= 0) drow[(*idx)[j]] += grow[j];
          }
        }
        detail::accumulate_grad<T>(*pin, din, "gather_columns");
      });
}

}  // namespace dil
