#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dil/tensor.hpp"

namespace dil {

enum class BnMode { kTrain, kEval };

// Batch-norm parameter block: trained affine (gamma, beta) plus running
// statistics. The statistics are state, not trainable parameters — they are
// updated in place during TRAIN-mode forwards and never enter the autograd
// graph.
template <typename T>
struct BnParams {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BnParams init(int channels) {
    if (channels < 1) throw AutogradError("batchnorm: channels must be >= 1");
    BnParams p;
    p.gamma = Tensor<T>::filled({channels}, T(1));
    p.beta = Tensor<T>::zeros({channels});
    p.running_mean = Tensor<T>::zeros({channels});
    p.running_var = Tensor<T>::filled({channels}, T(1));
    return p;
  }

  int channels() const { return gamma.dim(0); }

  BnParams clone() const {
    BnParams p;
    p.gamma = gamma.clone();
    p.beta = beta.clone();
    p.running_mean = running_mean.clone();
    p.running_var = running_var.clone();
    p.momentum = momentum;
    p.eps = eps;
    return p;
  }
};

// TRAIN mode normalizes with the current batch statistics (population
// variance) and, when update_stats is set, folds them into the running
// estimates as running <- (1 - momentum) * running + momentum * batch.
// No unbiased correction is applied to running_var. EVAL mode normalizes
// with the running statistics and never updates them.
template <typename T>
inline Tensor<T> batchnorm_forward(const Tensor<T>& input, BnParams<T>& params,
                                   BnMode mode, bool update_stats = false) {
  if (input.ndim() != 4) throw AutogradError("batchnorm: input must be NCHW");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (c != params.channels()) {
    throw AutogradError("batchnorm: input has " + std::to_string(c) +
                        " channels but params expect " +
                        std::to_string(params.channels()));
  }
  const int m = n * h * w;  // values per channel
  const int plane = h * w;
  const auto x = input.data();
  const auto gamma = params.gamma.data();
  const auto beta = params.beta.data();

  if (mode == BnMode::kTrain) {
    if (m < 2) {
      throw AutogradError(
          "batchnorm: TRAIN mode needs at least 2 values per channel");
    }
    std::vector<T> mean(c, T(0)), var(c, T(0)), inv_std(c, T(0));
    for (int ci = 0; ci < c; ++ci) {
      T acc = T(0);
      for (int ni = 0; ni < n; ++ni) {
        const T* p = x.data() + (static_cast<size_t>(ni) * c + ci) * plane;
        for (int j = 0; j < plane; ++j) acc += p[j];
      }
      mean[ci] = acc / static_cast<T>(m);
      T sq = T(0);
      for (int ni = 0; ni < n; ++ni) {
        const T* p = x.data() + (static_cast<size_t>(ni) * c + ci) * plane;
        for (int j = 0; j < plane; ++j) {
          const T d = p[j] - mean[ci];
          sq += d * d;
        }
      }
      var[ci] = sq / static_cast<T>(m);
      inv_std[ci] = T(1) / std::sqrt(var[ci] + params.eps);
    }
    if (update_stats) {
      auto rm = params.running_mean.raw_data();
      auto rv = params.running_var.raw_data();
      const T keep = T(1) - params.momentum;
      for (int ci = 0; ci < c; ++ci) {
        rm[ci] = keep * rm[ci] + params.momentum * mean[ci];
        rv[ci] = keep * rv[ci] + params.momentum * var[ci];
      }
    }

    auto xhat = std::make_shared<std::vector<T>>(input.numel());
    std::vector<T> out(input.numel());
    for (int ni = 0; ni < n; ++ni) {
      for (int ci = 0; ci < c; ++ci) {
        const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
        const T mu = mean[ci], is = inv_std[ci];
        const T g = gamma[ci], b = beta[ci];
        for (int j = 0; j < plane; ++j) {
          const T xh = (x[base + j] - mu) * is;
          (*xhat)[base + j] = xh;
          out[base + j] = g * xh + b;
        }
      }
    }

    auto pin = input.impl();
    auto pgamma = params.gamma.impl();
    auto pbeta = params.beta.impl();
    auto inv_std_saved = std::make_shared<std::vector<T>>(std::move(inv_std));
    return detail::make_result<T>(
        input.shape(), std::move(out), "batchnorm",
        {input, params.gamma, params.beta},
        [pin, pgamma, pbeta, xhat, inv_std_saved, n, c, plane,
         m](const TensorImpl<T>& res) {
          // Per channel: dgamma = sum(g * xhat), dbeta = sum(g), and the
          // full batch-statistics backward for the input:
          //   dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
          for (int ci = 0; ci < c; ++ci) {
            T sum_g = T(0), sum_gx = T(0);
            for (int ni = 0; ni < n; ++ni) {
              const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
              for (int j = 0; j < plane; ++j) {
                sum_g += res.grad[base + j];
                sum_gx += res.grad[base + j] * (*xhat)[base + j];
              }
            }
            if (pgamma->requires_grad) {
              if (pgamma->grad.empty()) pgamma->grad.assign(pgamma->data.size(), T(0));
              pgamma->grad[ci] += sum_gx;
            }
            if (pbeta->requires_grad) {
              if (pbeta->grad.empty()) pbeta->grad.assign(pbeta->data.size(), T(0));
              pbeta->grad[ci] += sum_g;
            }
            if (pin->requires_grad) {
              if (pin->grad.empty()) pin->grad.assign(pin->data.size(), T(0));
              const T g = pgamma->data[ci];
              const T is = (*inv_std_saved)[ci];
              const T inv_m = T(1) / static_cast<T>(m);
              // sums over dxhat fold gamma in: dxhat = g * dout
              const T sum_dxh = g * sum_g;
              const T sum_dxh_xh = g * sum_gx;
              for (int ni = 0; ni < n; ++ni) {
                const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
                for (int j = 0; j < plane; ++j) {
                  const T dxh = g * res.grad[base + j];
                  pin->grad[base + j] +=
                      is * inv_m *
                      (static_cast<T>(m) * dxh - sum_dxh -
                       (*xhat)[base + j] * sum_dxh_xh);
                }
              }
            }
          }
          if (pin->requires_grad) {
            ensure_finite<T>(pin->grad, "batchnorm");
          }
        });
  }

  // EVAL mode: a fixed per-channel affine using the running statistics.
  std::vector<T> shift(c), scale_c(c);
  {
    const auto rm = params.running_mean.data();
    const auto rv = params.running_var.data();
    for (int ci = 0; ci < c; ++ci) {
      const T is = T(1) / std::sqrt(rv[ci] + params.eps);
      scale_c[ci] = is;
      shift[ci] = rm[ci];
    }
  }
  auto xhat = std::make_shared<std::vector<T>>(input.numel());
  std::vector<T> out(input.numel());
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
      const T mu = shift[ci], is = scale_c[ci];
      const T g = gamma[ci], b = beta[ci];
      for (int j = 0; j < plane; ++j) {
        const T xh = (x[base + j] - mu) * is;
        (*xhat)[base + j] = xh;
        out[base + j] = g * xh + b;
      }
    }
  }
  auto pin = input.impl();
  auto pgamma = params.gamma.impl();
  auto pbeta = params.beta.impl();
  auto inv_std_saved = std::make_shared<std::vector<T>>(std::move(scale_c));
  return detail::make_result<T>(
      input.shape(), std::move(out), "batchnorm",
      {input, params.gamma, params.beta},
      [pin, pgamma, pbeta, xhat, inv_std_saved, n, c,
       plane](const TensorImpl<T>& res) {
        for (int ci = 0; ci < c; ++ci) {
          T sum_g = T(0), sum_gx = T(0);
          for (int ni = 0; ni < n; ++ni) {
            const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
            for (int j = 0; j < plane; ++j) {
              sum_g += res.grad[base + j];
              sum_gx += res.grad[base + j] * (*xhat)[base + j];
            }
          }
          if (pgamma->requires_grad) {
            if (pgamma->grad.empty()) pgamma->grad.assign(pgamma->data.size(), T(0));
            pgamma->grad[ci] += sum_gx;
          }
          if (pbeta->requires_grad) {
            if (pbeta->grad.empty()) pbeta->grad.assign(pbeta->data.size(), T(0));
            pbeta->grad[ci] += sum_g;
          }
          if (pin->requires_grad) {
            if (pin->grad.empty()) pin->grad.assign(pin->data.size(), T(0));
            const T gs = pgamma->data[ci] * (*inv_std_saved)[ci];
            for (int ni = 0; ni < n; ++ni) {
              const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
              for (int j = 0; j < plane; ++j) {
                pin->grad[base + j] += gs * res.grad[base + j];
              }
            }
          }
        }
        if (pin->requires_grad) {
          ensure_finite<T>(pin->grad, "batchnorm");
        }
      });
}

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  static LinearParams zeros(int in_dim, int out_dim) {
    if (in_dim < 1 || out_dim < 1) {
      throw AutogradError("linear: dimensions must be >= 1");
    }
    LinearParams p;
    p.weight = Tensor<T>::zeros({out_dim, in_dim});
    p.bias = Tensor<T>::zeros({out_dim});
    return p;
  }

  int in_dim() const { return weight.dim(1); }
  int out_dim() const { return weight.dim(0); }

  LinearParams clone() const {
    LinearParams p;
    p.weight = weight.clone();
    p.bias = bias.clone();
    return p;
  }
};

template <typename T>
inline Tensor<T> linear_forward(const Tensor<T>& input,
                                const LinearParams<T>& params) {
  if (input.ndim() != 2) throw AutogradError("linear: input must be 2-D");
  const int n = input.dim(0), in_dim = input.dim(1);
  if (in_dim != params.in_dim()) {
    throw AutogradError("linear: input width " + std::to_string(in_dim) +
                        " does not match weight width " +
                        std::to_string(params.in_dim()));
  }
  const int out_dim = params.out_dim();
  std::vector<T> out(static_cast<size_t>(n) * out_dim);
  const auto x = input.data();
  const auto wdat = params.weight.data();
  const auto bdat = params.bias.data();
  for (int ni = 0; ni < n; ++ni) {
    const T* row = x.data() + static_cast<size_t>(ni) * in_dim;
    T* orow = out.data() + static_cast<size_t>(ni) * out_dim;
    for (int o = 0; o < out_dim; ++o) {
      const T* wrow = wdat.data() + static_cast<size_t>(o) * in_dim;
      T acc = bdat[o];
      for (int i = 0; i < in_dim; ++i) acc += wrow[i] * row[i];
      orow[o] = acc;
    }
  }
  auto pin = input.impl();
  auto pw = params.weight.impl();
  auto pb = params.bias.impl();
  return detail::make_result<T>(
      {n, out_dim}, std::move(out), "linear",
      {input, params.weight, params.bias},
      [pin, pw, pb, n, in_dim, out_dim](const TensorImpl<T>& res) {
        if (pin->requires_grad) {
          std::vector<T> din(pin->data.size(), T(0));
          for (int ni = 0; ni < n; ++ni) {
            const T* grow = res.grad.data() + static_cast<size_t>(ni) * out_dim;
            T* drow = din.data() + static_cast<size_t>(ni) * in_dim;
            for (int o = 0; o < out_dim; ++o) {
              const T g = grow[o];
              const T* wrow = pw->data.data() + static_cast<size_t>(o) * in_dim;
              for (int i = 0; i < in_dim; ++i) drow[i] += g * wrow[i];
            }
          }
          detail::accumulate_grad<T>(*pin, din, "linear");
        }
        if (pw->requires_grad) {
          std::vector<T> dw(pw->data.size(), T(0));
          for (int ni = 0; ni < n; ++ni) {
            const T* grow = res.grad.data() + static_cast<size_t>(ni) * out_dim;
            const T* xrow = pin->data.data() + static_cast<size_t>(ni) * in_dim;
            for (int o = 0; o < out_dim; ++o) {
              const T g = grow[o];
              T* dwrow = dw.data() + static_cast<size_t>(o) * in_dim;
              for (int i = 0; i < in_dim; ++i) dwrow[i] += g * xrow[i];
            }
          }
          detail::accumulate_grad<T>(*pw, dw, "linear");
        }
        if (pb->requires_grad) {
          std::vector<T> db(static_cast<size_t>(out_dim), T(0));
          for (int ni = 0; ni < n; ++ni) {
            const T* grow = res.grad.data() + static_cast<size_t>(ni) * out_dim;
            for (int o = 0; o < out_dim; ++o) db[o] += grow[o];
          }
          detail::accumulate_grad<T>(*pb, db, "linear");
        }
      });
}

// Mean cross-entropy over the batch from raw logits, stabilized by row-max
// subtraction. Labels are class indices.
template <typename T>
inline Tensor<T> cross_entropy_loss(const Tensor<T>& logits,
                                    const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw AutogradError("cross_entropy: logits must be 2-D");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw DataError("cross_entropy: got " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) {
      throw DataError("cross_entropy: label " + std::to_string(y) +
                      " out of range [0, " + std::to_string(c) + ")");
    }
  }
  const auto x = logits.data();
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  T total = T(0);
  for (int ni = 0; ni < n; ++ni) {
    const T* row = x.data() + static_cast<size_t>(ni) * c;
    T mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const T log_denom = std::log(denom);
    T* prow = probs->data() + static_cast<size_t>(ni) * c;
    for (int j = 0; j < c; ++j) prow[j] = std::exp(row[j] - mx) / denom;
    total += mx + log_denom - row[labels[static_cast<size_t>(ni)]];
  }
  total /= static_cast<T>(n);
  auto pin = logits.impl();
  auto ys = std::make_shared<std::vector<int>>(labels);
  return detail::make_result<T>(
      {1}, {total}, "cross_entropy", {logits},
      [pin, probs, ys, n, c](const TensorImpl<T>& res) {
        const T g = res.grad[0] / static_cast<T>(n);
        std::vector<T> d(pin->data.size());
        for (int ni = 0; ni < n; ++ni) {
          const T* prow = probs->data() + static_cast<size_t>(ni) * c;
          T* drow = d.data() + static_cast<size_t>(ni) * c;
          const int y = (*ys)[static_cast<size_t>(ni)];
          for (int j = 0; j < c; ++j) {
            drow[j] = g * (prow[j] - (j == y ? T(1) : T(0)));
          }
        }
        detail::accumulate_grad<T>(*pin, d, "cross_entropy");
      });
}

// Mean binary cross-entropy with logits over all N*C entries, computed in
// the logit-stable form
//   bce(z, y) = max(z, 0) - z*y + log(1 + exp(-|z|)).
// Targets must be exactly 0 or 1.
template <typename T>
inline Tensor<T> binary_cross_entropy_loss(const Tensor<T>& logits,
                                           const Tensor<T>& targets) {
  if (logits.ndim() != 2) throw AutogradError("bce: logits must be 2-D");
  if (logits.shape() != targets.shape()) {
    throw AutogradError("bce: logits and targets must have the same shape");
  }
  const auto z = logits.data();
  const auto y = targets.data();
  for (const T& v : y) {
    if (v != T(0) && v != T(1)) {
      throw DataError("bce: targets must be exactly 0 or 1");
    }
  }
  const size_t count = logits.numel();
  T total = T(0);
  for (size_t i = 0; i < count; ++i) {
    const T zi = z[i];
    const T pos = zi > T(0) ? zi : T(0);
    total += pos - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  total /= static_cast<T>(count);
  auto pin = logits.impl();
  auto pt = targets.impl();
  return detail::make_result<T>(
      {1}, {total}, "bce", {logits},
      [pin, pt, count](const TensorImpl<T>& res) {
        const T g = res.grad[0] / static_cast<T>(count);
        std::vector<T> d(count);
        for (size_t i = 0; i < count; ++i) {
          const T zi = pin->data[i];
          const T sig = T(1) / (T(1) + std::exp(-zi));
          d[i] = g * (sig - pt->data[i]);
        }
        detail::accumulate_grad<T>(*pin, d, "bce");
      });
}

}  // namespace dil
