// Copyright 2026 The IFA Toolkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ifa/archive.hpp"
#include "ifa/schemes.hpp"

namespace ifa::importance {

// Per-feature spatial sums of a weighted stack: entry f = sum_ij W^f_ij.
std::vector<double> contribution(const schemes::WeightedFeatureStack& stack);

// F x C matrix of mean per-feature contributions. Columns without samples
// are unavailable and hold NaN.
struct ImportanceMatrix {
  std::size_t num_features = 0;
  std::size_t num_classes = 0;
  std::vector<double> values;  // row-major, index f * C + c
  std::vector<double> stddev;  // population std of the same entries
  std::vector<std::uint64_t> counts;
  std::vector<std::string> class_names;
  schemes::SchemeId scheme = schemes::SchemeId::kGradCam;
  std::string archive_id;
  archive::DatasetSplit split = archive::DatasetSplit::kOther;
  std::string method;  // "per_class" or "unified"

  double at(std::size_t f, std::size_t c) const {
    return values[f * num_classes + c];
  }
  bool available(std::size_t c) const { return counts[c] > 0; }
  std::vector<double> column(std::size_t c) const;
};

// Sum/count bookkeeping behind both IM estimators. Partial accumulators over
// disjoint sample sets merge into the single-pass result.
class ImAccumulator {
 public:
  ImAccumulator(std::size_t num_features, std::size_t num_classes);

  void add(std::size_t class_id, std::span<const double> contribution);
  void merge(const ImAccumulator& other);

  // Mean over counts[c] for every class with samples.
  ImportanceMatrix finalize() const;
  // Mean of column c over an explicit denominator (per-class IM uses all N).
  std::vector<double> column_mean(std::size_t c, std::uint64_t denominator) const;
  std::uint64_t count(std::size_t c) const { return counts_[c]; }

 private:
  std::size_t features_;
  std::size_t classes_;
  std::vector<double> sums_;
  std::vector<double> sums_sq_;
  std::vector<std::uint64_t> counts_;
};

struct ImColumn {
  std::int32_t class_id = 0;
  std::uint64_t samples = 0;
  std::vector<double> values;
  std::vector<double> stddev;
};

// One column per the per-class definition: mean contribution for class c
// over every selected sample regardless of its label. Throws kMissingGrads
// listing all samples without gradients for c.
ImColumn build_im_per_class(const archive::ArchiveReader& reader,
                            schemes::SchemeId scheme, std::int32_t class_id,
                            const archive::SampleSelector& selector = {},
                            unsigned workers = 1);

// Per-class columns for every class assembled into a matrix.
ImportanceMatrix build_im_per_class_all(const archive::ArchiveReader& reader,
                                        schemes::SchemeId scheme,
                                        unsigned workers = 1);

// Single pass: each labelled sample contributes to its own class column.
ImportanceMatrix build_im_unified(const archive::ArchiveReader& reader,
                                  schemes::SchemeId scheme,
                                  unsigned workers = 1);

enum class ThresholdKind { kTopPct, kBottomPct, kExplicit };

struct ThresholdRule {
  ThresholdKind kind = ThresholdKind::kTopPct;
  double pct = 100.0;
  std::vector<std::uint32_t> features;  // kExplicit only

  std::string describe() const;
};

struct FeatureMask {
  std::size_t num_features = 0;
  std::vector<std::vector<std::uint8_t>> per_class;  // C vectors of length F
  ThresholdRule rule;
  std::string source;  // provenance of the IM this was cut from

  const std::vector<std::uint8_t>& for_class(std::size_t c) const;
  std::vector<std::uint32_t> selected(std::size_t c) const;
  FeatureMask complement() const;
};

// Number of features kept by top_pct(k): ceil(k / 100 * F).
std::size_t top_count(double pct, std::size_t num_features);

// Top-k selection breaks ties toward the lower feature index. Unavailable
// columns select nothing under top/bottom rules.
FeatureMask threshold_im(const ImportanceMatrix& im, const ThresholdRule& rule);

FeatureMask all_ones_mask(std::size_t num_features, std::size_t num_classes);

struct ClassDrift {
  std::size_t class_id = 0;
  std::vector<double> difference;  // test - train
  double normalized_norm = 0.0;    // ||test - train|| / ||train||
  std::vector<std::uint32_t> most_drifted;
};

struct DriftReport {
  std::vector<ClassDrift> classes;
  std::string to_json() const;
};

DriftReport im_drift(const ImportanceMatrix& train, const ImportanceMatrix& test);

// 1 - cosine(sample, column); 1 for an all-zero sample.
double outlier_score(std::span<const double> sample_contribution,
                     std::span<const double> im_column);

struct RedundancyReport {
  double eps = 0.0;
  double threshold = 0.0;
  double ratio = 0.0;
  std::vector<std::uint32_t> rarely_activated;
  std::string to_json() const;
};

RedundancyReport redundancy_report(const ImportanceMatrix& im, double eps);

// im.csv: header "feature,<class names>", 9 significant digits.
std::string im_to_csv(const ImportanceMatrix& im);
ImportanceMatrix im_from_csv(const std::string& text);
// Sidecar with counts, stddev and provenance.
std::string im_meta_to_json(const ImportanceMatrix& im);
void apply_im_meta(ImportanceMatrix& im, const std::string& json_text);

std::string mask_to_json(const FeatureMask& mask);
FeatureMask mask_from_json(const std::string& text);

}  // namespace ifa::importance
