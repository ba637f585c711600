#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dil/common.hpp"
#include "dil/tensor.hpp"

namespace dil {

// Recipe for one synthetic domain. Every class in the global vocabulary has
// a fixed smooth prototype field; a domain renders samples as
//
//   x = emphasis_row * (scale * (shift(prototype_d) + noise * eps) + offset)
//
// where prototype_d = (p + drift * q_d) / sqrt(1 + drift^2) blends the
// class prototype p with a domain-specific field q_d (unit variance is
// preserved), and shift() rotates the columns circularly by time_shift.
// scale/offset/emphasis move the marginal feature statistics; time_shift
// and drift move the class geometry itself, which is what breaks raw
// nearest-centroid transfer between domains.
struct SyntheticDomainSpec {
  std::string name;
  TaskKind task = TaskKind::kSingleLabel;
  std::vector<int> class_ids;  // vocabulary indices, in domain class order
  int train_per_class = 40;
  int test_per_class = 25;
  int f = 16;  // feature rows (frequency-like axis)
  int t = 16;  // feature columns (time-like axis)
  uint64_t prototype_seed = 1;
  double scale = 1.0;
  double offset = 0.0;
  double noise = 0.1;
  double drift = 0.0;
  int time_shift = 0;  // circular column rotation, reduced modulo t
  std::vector<double> emphasis;  // empty, or one factor per feature row

  // Throws ConfigError on violated invariants (scale <= 0, noise < 0,
  // dims < 8x8, empty or duplicated class list, emphasis size mismatch).
  void validate() const;
};

// In-memory sample collection. Features are stored at file precision
// (32-bit) in row-major [n, f, t] order. Labels are positions within the
// generating class list: single-label tasks fill `labels` (n entries),
// multi-label tasks fill `multi_hot` (n * n_classes entries of 0/1).
struct Dataset {
  int n = 0;
  int f = 0;
  int t = 0;
  int n_classes = 0;
  TaskKind task = TaskKind::kSingleLabel;
  std::vector<float> features;
  std::vector<int> labels;
  std::vector<int> multi_hot;
};

// The smooth unit-variance prototype field for one vocabulary class, before
// any domain transform. Exposed so tests can compare samples against it.
std::vector<float> class_prototype(int f, int t, uint64_t prototype_seed,
                                   int class_id);

// Smooth per-row emphasis multipliers exp(strength * field_f) for a seeded
// 1-D field; strength 0 gives all ones.
std::vector<double> band_emphasis(int f, double strength, uint64_t seed);

// The stock 3-domain benchmark: a clean base domain plus two domains whose
// channel statistics (gain, offset, band emphasis) and time alignment are
// shifted. Gated so raw nearest-centroid transfer between domains fails
// while within-domain separation stays perfect.
std::vector<SyntheticDomainSpec> default_synthetic_domains();

// Deterministic per (spec, seed). `train` picks the train or test split
// (they differ only in sample count and noise stream).
Dataset generate_synthetic_domain(const SyntheticDomainSpec& spec,
                                  uint64_t seed, bool train);

// One manifest line: a feature file plus its domain and label names.
struct ManifestRecord {
  std::string path;  // resolved relative to the manifest's directory
  std::string domain;
  std::vector<std::string> labels;
  int line = 0;  // 1-based line number in the manifest file
};

struct Manifest {
  std::vector<ManifestRecord> records;
};

// Comma-separated manifest: `path,domain,label[;label...]` per line, '#'
// starts a comment. Every referenced file must exist; duplicate paths and
// empty manifests are DataErrors (messages carry the line number).
Manifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& manifest);

// Feature files hold one [f, t] grid of 32-bit little-endian floats behind
// a fixed header (magic, version, dtype code, dims).
void write_features(const std::string& path, int f, int t,
                    const std::vector<float>& values);
void load_features(const std::string& path, int& f, int& t,
                   std::vector<float>& values);

// One vocabulary name per line.
std::vector<std::string> load_vocabulary(const std::string& path);
void write_vocabulary(const std::string& path,
                      const std::vector<std::string>& names);

// Loads every record of a manifest into a Dataset, mapping label names
// through the vocabulary. All files must agree on [f, t]. Errors name the
// offending record's line number.
Dataset load_manifest_dataset(const Manifest& manifest,
                              const std::vector<std::string>& vocabulary,
                              TaskKind task);

// Seeded epoch batching: a shuffled permutation of [0, n) chopped into
// batches of `batch_size`, keeping the final partial batch.
std::vector<std::vector<int>> batch_indices(int n, int batch_size,
                                            uint64_t epoch_seed);

// Copies the indexed samples into an [B, 1, f, t] input tensor at compute
// precision plus the matching label views.
template <typename T>
Tensor<T> assemble_batch(const Dataset& data, const std::vector<int>& idx) {
  if (idx.empty()) throw DataError("assemble_batch: empty index list");
  const size_t grid = static_cast<size_t>(data.f) * data.t;
  std::vector<T> out(idx.size() * grid);
  for (size_t b = 0; b < idx.size(); ++b) {
    const int i = idx[b];
    if (i < 0 || i >= data.n) {
      throw DataError("assemble_batch: index " + std::to_string(i) +
                      " out of range");
    }
    const float* src = data.features.data() + static_cast<size_t>(i) * grid;
    T* dst = out.data() + b * grid;
    for (size_t j = 0; j < grid; ++j) dst[j] = static_cast<T>(src[j]);
  }
  return Tensor<T>::from({static_cast<int>(idx.size()), 1, data.f, data.t},
                         std::move(out));
}

// Label views for a batch: single-label class indices, or a [B, C] 0/1
// target tensor for multi-label tasks.
std::vector<int> batch_labels(const Dataset& data, const std::vector<int>& idx);

template <typename T>
Tensor<T> batch_multi_hot(const Dataset& data, const std::vector<int>& idx) {
  if (data.task != TaskKind::kMultiLabel) {
    throw DataError("batch_multi_hot: dataset is single-label");
  }
  std::vector<T> out(idx.size() * static_cast<size_t>(data.n_classes));
  for (size_t b = 0; b < idx.size(); ++b) {
    const int i = idx[b];
    if (i < 0 || i >= data.n) {
      throw DataError("batch_multi_hot: index " + std::to_string(i) +
                      " out of range");
    }
    for (int c = 0; c < data.n_classes; ++c) {
      out[b * static_cast<size_t>(data.n_classes) + static_cast<size_t>(c)] =
          static_cast<T>(
              data.multi_hot[static_cast<size_t>(i) * data.n_classes +
                             static_cast<size_t>(c)]);
    }
  }
  return Tensor<T>::from(
      {static_cast<int>(idx.size()), data.n_classes}, std::move(out));
}

}  // namespace dil
