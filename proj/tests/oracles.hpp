#pragma once

// Independent reference implementations used as test oracles. These are
// deliberately written as direct loops over the mathematical definitions,
// with no code shared with the library implementations they check.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dil/rng.hpp"

namespace oracle {

// Plain 6-nested-loop convolution over NCHW input and OIKhKw kernel with
// explicit bounds checks instead of a padded buffer.
inline std::vector<double> conv2d_loops(const std::vector<double>& in, int n,
                                        int c, int h, int w,
                                        const std::vector<double>& ker, int o,
                                        int kh, int kw, int stride, int pad) {
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<size_t>(n) * o * ho * wo, 0.0);
  for (int ni = 0; ni < n; ++ni) {
    for (int oi = 0; oi < o; ++oi) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int ci = 0; ci < c; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += in[((static_cast<size_t>(ni) * c + ci) * h + iy) * w + ix] *
                       ker[((static_cast<size_t>(oi) * c + ci) * kh + ky) * kw + kx];
              }
            }
          }
          out[((static_cast<size_t>(ni) * o + oi) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
  return out;
}

// Ranking-based average precision for one multi-hot sample: for every
// positive label, the precision of positives among the labels ranked at or
// above it (score descending, ties broken toward the lower class index).
// Returns the sum of per-positive precisions and the positive count.
inline void lrap_terms(const std::vector<double>& scores,
                       const std::vector<int>& truth, double& precision_sum,
                       int& positives) {
  const int c = static_cast<int>(scores.size());
  precision_sum = 0.0;
  positives = 0;
  for (int j = 0; j < c; ++j) {
    if (truth[j] != 1) continue;
    ++positives;
    int rank = 0, pos_at_or_above = 0;
    for (int k = 0; k < c; ++k) {
      const bool above = scores[k] > scores[j] ||
                         (scores[k] == scores[j] && k <= j);
      if (above) {
        ++rank;
        if (truth[k] == 1) ++pos_at_or_above;
      }
    }
    precision_sum += static_cast<double>(pos_at_or_above) / rank;
  }
}

// Corpus-level label-weighted LRAP: every positive (sample, label) pair
// carries equal weight.
inline double lwlrap_loops(const std::vector<std::vector<double>>& scores,
                           const std::vector<std::vector<int>>& truth) {
  double num = 0.0;
  long long den = 0;
  for (size_t s = 0; s < scores.size(); ++s) {
    double prec = 0.0;
    int pos = 0;
    lrap_terms(scores[s], truth[s], prec, pos);
    num += prec;
    den += pos;
  }
  return num / static_cast<double>(den);
}

// Nearest-centroid classifier in raw feature space. Centroids come from the
// training features; classification is by minimal squared L2 distance with
// ties to the lower class index.
struct NearestCentroid {
  std::vector<std::vector<double>> centroids;

  static NearestCentroid fit(const std::vector<float>& features, size_t dim,
                             const std::vector<int>& labels, int n_classes) {
    NearestCentroid nc;
    nc.centroids.assign(static_cast<size_t>(n_classes),
                        std::vector<double>(dim, 0.0));
    std::vector<long long> counts(static_cast<size_t>(n_classes), 0);
    for (size_t s = 0; s < labels.size(); ++s) {
      auto& cen = nc.centroids[static_cast<size_t>(labels[s])];
      for (size_t j = 0; j < dim; ++j) cen[j] += features[s * dim + j];
      ++counts[static_cast<size_t>(labels[s])];
    }
    for (int c = 0; c < n_classes; ++c) {
      for (size_t j = 0; j < dim; ++j) {
        nc.centroids[static_cast<size_t>(c)][j] /=
            static_cast<double>(counts[static_cast<size_t>(c)]);
      }
    }
    return nc;
  }

  int classify(const float* x, size_t dim) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < centroids.size(); ++c) {
      double d = 0.0;
      for (size_t j = 0; j < dim; ++j) {
        const double diff = static_cast<double>(x[j]) - centroids[c][j];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    return best;
  }

  double accuracy(const std::vector<float>& features, size_t dim,
                  const std::vector<int>& labels) const {
    long long hits = 0;
    for (size_t s = 0; s < labels.size(); ++s) {
      if (classify(features.data() + s * dim, dim) == labels[s]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
  }
};

inline std::vector<double> random_vector(dil::Rng& rng, size_t n, double lo,
                                         double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace oracle
