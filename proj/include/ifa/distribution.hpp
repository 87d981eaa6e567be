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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ifa/archive.hpp"
#include "ifa/schemes.hpp"

namespace ifa::distribution {

// Mergeable streaming quantile sketch (merging t-digest, arcsine scale).
// Memory is O(compression) regardless of how many values are added.
class TDigest {
 public:
  explicit TDigest(double compression = 200.0);

  void add(double value, double weight = 1.0);
  void merge(const TDigest& other);

  // q in [0, 1]; interpolates between centroid centres, pinned to the
  // observed min and max at the tails.
  double quantile(double q) const;

  double total_weight() const { return total_ + buffered_weight_; }
  double compression() const { return compression_; }
  std::size_t centroid_count() const;

 private:
  struct Centroid {
    double mean;
    double weight;
  };

  void flush() const;

  double compression_;
  mutable std::vector<Centroid> centroids_;
  mutable std::vector<Centroid> buffer_;
  mutable double total_ = 0.0;
  mutable double buffered_weight_ = 0.0;
  double min_;
  double max_;
};

enum class StatsMode { kExact, kSketch };
std::string to_string(StatsMode mode);
StatsMode parse_stats_mode(const std::string& text);

// Uniform bins over [lo, hi]; the last bin is closed on the right.
struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::uint64_t> counts;

  Histogram() = default;
  Histogram(double lo, double hi, std::size_t bins);

  void add(double value);
  bool same_edges(const Histogram& other) const;
  std::uint64_t total() const;
};

inline constexpr std::size_t kHistogramBins = 256;

inline const std::vector<double>& default_percentiles() {
  static const std::vector<double> kDefault{1, 5, 10, 25, 50, 75, 90, 95, 99};
  return kDefault;
}

// Partial statistics over a value stream. Accumulators for disjoint shards
// combine with merge(); empty accumulators are the identity.
class StatsAccumulator {
 public:
  explicit StatsAccumulator(StatsMode mode = StatsMode::kExact,
                            std::optional<Histogram> histogram = std::nullopt,
                            double compression = 200.0);

  void add(double value);
  void add(std::span<const double> values);
  // Throws kIncompatible on differing mode or histogram edges.
  void merge(const StatsAccumulator& other);

  StatsMode mode() const { return mode_; }
  std::uint64_t count() const { return count_; }
  double mean() const { return mean_; }
  double m2() const { return m2_; }
  double variance() const;  // population
  double min() const { return min_; }
  double max() const { return max_; }
  const std::optional<Histogram>& histogram() const { return histogram_; }

  // Exact mode: full sort, type-7 interpolation. Sketch mode: t-digest.
  double percentile(double p) const;
  std::vector<double> percentiles(std::span<const double> ps) const;

  // Exact mode keeps every value; sorted lazily for percentile queries.
  const std::vector<double>& values() const { return values_; }

 private:
  StatsMode mode_;
  std::uint64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double min_;
  double max_;
  mutable std::vector<double> values_;
  mutable bool sorted_ = true;
  std::optional<TDigest> digest_;
  std::optional<Histogram> histogram_;
};

StatsAccumulator merge_stats(StatsAccumulator a, const StatsAccumulator& b);

// Type-7 percentile of an ascending-sorted sequence.
double type7_percentile(std::span<const double> sorted, double p);

struct PercentileValue {
  double p;
  double value;
};

// Class id used for statistics pooled over each sample's own true class.
inline constexpr std::int32_t kPerTrueClass = -1;

struct DistributionStats {
  std::int32_t class_id = 0;
  schemes::SchemeId scheme = schemes::SchemeId::kGradCam;
  StatsMode mode = StatsMode::kExact;
  std::uint64_t count = 0;
  std::uint64_t samples_used = 0;
  std::uint64_t samples_skipped = 0;
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<PercentileValue> percentiles;
  Histogram histogram;
  archive::DatasetSplit source_split = archive::DatasetSplit::kOther;

  // Throws kInvalidArgument if p was not requested.
  double percentile(double p) const;
};

DistributionStats finalize(const StatsAccumulator& acc,
                           std::span<const double> percentiles);

struct CollectOptions {
  StatsMode mode = StatsMode::kExact;
  std::vector<double> percentiles = default_percentiles();
  unsigned workers = 1;
  double compression = 200.0;
};

// Statistics of every value of the raw summed map M = sum_f W^f (before
// resizing and scaling) over all samples carrying grads for the class.
// class_id == kPerTrueClass pools each labelled sample's own class.
DistributionStats collect_stats(const archive::ArchiveReader& reader,
                                schemes::SchemeId scheme,
                                std::int32_t class_id,
                                const CollectOptions& options = {});

struct StatsFile {
  std::vector<DistributionStats> entries;

  // Entry for class c, falling back to a pooled per-true-class entry.
  const DistributionStats* find(std::int32_t class_id) const;
};

std::string stats_to_json(const StatsFile& file);
StatsFile stats_from_json(const std::string& text);

}  // namespace ifa::distribution
