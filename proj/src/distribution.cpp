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

#include "ifa/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "ifa/campipe.hpp"
#include "ifa/parallel.hpp"

namespace ifa::distribution {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Arcsine scale function and its inverse; q in [0, 1].
double k_scale(double q, double compression) {
  return compression / (2.0 * std::numbers::pi) * std::asin(2.0 * q - 1.0);
}

double k_inverse(double k, double compression) {
  const double q = (std::sin(k * 2.0 * std::numbers::pi / compression) + 1.0) / 2.0;
  return std::clamp(q, 0.0, 1.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// TDigest

TDigest::TDigest(double compression)
    : compression_(compression), min_(kInf), max_(-kInf) {
  if (!(compression >= 10.0)) {
    throw Error(ErrorKind::kInvalidArgument, "t-digest compression must be >= 10");
  }
}

void TDigest::add(double value, double weight) {
  if (!(weight > 0.0)) return;
  buffer_.push_back({value, weight});
  buffered_weight_ += weight;
  min_ = std::min(min_, value);
  max_ = std::max(max_, value);
  if (buffer_.size() >= static_cast<std::size_t>(compression_ * 8)) flush();
}

void TDigest::merge(const TDigest& other) {
  other.flush();
  for (const auto& c : other.centroids_) {
    buffer_.push_back(c);
    buffered_weight_ += c.weight;
  }
  min_ = std::min(min_, other.min_);
  max_ = std::max(max_, other.max_);
  flush();
}

std::size_t TDigest::centroid_count() const {
  flush();
  return centroids_.size();
}

void TDigest::flush() const {
  if (buffer_.empty()) return;
  std::vector<Centroid> all;
  all.reserve(centroids_.size() + buffer_.size());
  all.insert(all.end(), centroids_.begin(), centroids_.end());
  all.insert(all.end(), buffer_.begin(), buffer_.end());
  buffer_.clear();
  std::stable_sort(all.begin(), all.end(),
                   [](const Centroid& a, const Centroid& b) { return a.mean < b.mean; });
  const double total = total_ + buffered_weight_;
  total_ = total;
  buffered_weight_ = 0.0;

  std::vector<Centroid> merged;
  merged.reserve(static_cast<std::size_t>(compression_) + 8);
  Centroid cur = all.front();
  double weight_so_far = 0.0;
  double q_limit = k_inverse(k_scale(0.0, compression_) + 1.0, compression_);
  for (std::size_t i = 1; i < all.size(); ++i) {
    const Centroid& next = all[i];
    const double q = (weight_so_far + cur.weight + next.weight) / total;
    if (q <= q_limit) {
      const double w = cur.weight + next.weight;
      cur.mean += (next.mean - cur.mean) * next.weight / w;
      cur.weight = w;
    } else {
      weight_so_far += cur.weight;
      merged.push_back(cur);
      q_limit = k_inverse(k_scale(weight_so_far / total, compression_) + 1.0,
                          compression_);
      cur = next;
    }
  }
  merged.push_back(cur);
  centroids_ = std::move(merged);
}

double TDigest::quantile(double q) const {
  flush();
  if (centroids_.empty()) {
    throw Error(ErrorKind::kEmptyStats, "quantile of an empty t-digest");
  }
  if (q <= 0.0) return min_;
  if (q >= 1.0) return max_;
  if (centroids_.size() == 1) return centroids_.front().mean;

  const double index = q * total_;
  const Centroid& first = centroids_.front();
  if (index < first.weight / 2.0) {
    if (first.weight <= 1.0) return first.mean;
    return min_ + (first.mean - min_) * (index / (first.weight / 2.0));
  }
  const Centroid& last = centroids_.back();
  if (index > total_ - last.weight / 2.0) {
    if (last.weight <= 1.0) return last.mean;
    const double into = (total_ - index) / (last.weight / 2.0);
    return max_ - (max_ - last.mean) * into;
  }
  double cumulative = first.weight / 2.0;  // centre of centroid i
  for (std::size_t i = 0; i + 1 < centroids_.size(); ++i) {
    const Centroid& a = centroids_[i];
    const Centroid& b = centroids_[i + 1];
    const double gap = (a.weight + b.weight) / 2.0;
    if (index <= cumulative + gap) {
      const double t = gap > 0.0 ? (index - cumulative) / gap : 0.0;
      return a.mean + (b.mean - a.mean) * t;
    }
    cumulative += gap;
  }
  return last.mean;
}

// ---------------------------------------------------------------------------

std::string to_string(StatsMode mode) {
  return mode == StatsMode::kExact ? "exact" : "sketch";
}

StatsMode parse_stats_mode(const std::string& text) {
  if (text == "exact") return StatsMode::kExact;
  if (text == "sketch") return StatsMode::kSketch;
  throw Error(ErrorKind::kInvalidArgument, "unknown stats mode: " + text);
}

Histogram::Histogram(double lo_, double hi_, std::size_t bins)
    : lo(lo_), hi(hi_), counts(bins, 0) {}

void Histogram::add(double value) {
  if (counts.empty()) return;
  std::size_t bin = 0;
  const double width = hi - lo;
  if (width > 0.0) {
    const double pos = (value - lo) / width * static_cast<double>(counts.size());
    if (pos > 0.0) {
      bin = std::min(counts.size() - 1, static_cast<std::size_t>(pos));
    }
  }
  ++counts[bin];
}

bool Histogram::same_edges(const Histogram& other) const {
  return lo == other.lo && hi == other.hi && counts.size() == other.counts.size();
}

std::uint64_t Histogram::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

// ---------------------------------------------------------------------------
// StatsAccumulator

StatsAccumulator::StatsAccumulator(StatsMode mode, std::optional<Histogram> histogram,
                                   double compression)
    : mode_(mode), min_(kInf), max_(-kInf), histogram_(std::move(histogram)) {
  if (mode_ == StatsMode::kSketch) digest_.emplace(compression);
}

void StatsAccumulator::add(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
  min_ = std::min(min_, x);
  max_ = std::max(max_, x);
  if (mode_ == StatsMode::kExact) {
    values_.push_back(x);
    sorted_ = false;
  } else {
    digest_->add(x);
  }
  if (histogram_) histogram_->add(x);
}

void StatsAccumulator::add(std::span<const double> values) {
  for (double v : values) add(v);
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (other.mode_ != mode_) {
    throw Error(ErrorKind::kIncompatible, "cannot merge exact and sketch statistics");
  }
  if (histogram_.has_value() != other.histogram_.has_value() ||
      (histogram_ && !histogram_->same_edges(*other.histogram_))) {
    throw Error(ErrorKind::kIncompatible, "histogram bin edges differ");
  }
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  // Chan et al. pairwise update.
  const double n_a = static_cast<double>(count_);
  const double n_b = static_cast<double>(other.count_);
  const double n = n_a + n_b;
  const double delta = other.mean_ - mean_;
  mean_ += delta * n_b / n;
  m2_ += other.m2_ + delta * delta * n_a * n_b / n;
  count_ += other.count_;
  min_ = std::min(min_, other.min_);
  max_ = std::max(max_, other.max_);
  if (mode_ == StatsMode::kExact) {
    values_.insert(values_.end(), other.values_.begin(), other.values_.end());
    sorted_ = false;
  } else {
    digest_->merge(*other.digest_);
  }
  if (histogram_) {
    for (std::size_t i = 0; i < histogram_->counts.size(); ++i) {
      histogram_->counts[i] += other.histogram_->counts[i];
    }
  }
}

double StatsAccumulator::variance() const {
  return count_ == 0 ? 0.0 : std::max(0.0, m2_ / static_cast<double>(count_));
}

double type7_percentile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorKind::kEmptyStats, "percentile of no values");
  const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double StatsAccumulator::percentile(double p) const {
  if (!(p >= 0.0 && p <= 100.0)) {
    throw Error(ErrorKind::kInvalidArgument, "percentile outside [0, 100]");
  }
  if (count_ == 0) throw Error(ErrorKind::kEmptyStats, "no values accumulated");
  if (mode_ == StatsMode::kExact) {
    if (!sorted_) {
      std::sort(values_.begin(), values_.end());
      sorted_ = true;
    }
    return type7_percentile(values_, p);
  }
  return std::clamp(digest_->quantile(p / 100.0), min_, max_);
}

std::vector<double> StatsAccumulator::percentiles(std::span<const double> ps) const {
  std::vector<double> out;
  out.reserve(ps.size());
  for (double p : ps) out.push_back(percentile(p));
  return out;
}

StatsAccumulator merge_stats(StatsAccumulator a, const StatsAccumulator& b) {
  a.merge(b);
  return a;
}

double DistributionStats::percentile(double p) const {
  for (const auto& pv : percentiles) {
    if (pv.p == p) return pv.value;
  }
  throw Error(ErrorKind::kInvalidArgument,
              "percentile " + std::to_string(p) + " was not collected");
}

DistributionStats finalize(const StatsAccumulator& acc, std::span<const double> ps) {
  if (acc.count() == 0) throw Error(ErrorKind::kEmptyStats, "no values accumulated");
  DistributionStats s;
  s.mode = acc.mode();
  s.count = acc.count();
  s.mean = acc.mean();
  s.std = std::sqrt(acc.variance());
  s.min = acc.min();
  s.max = acc.max();
  for (double p : ps) s.percentiles.push_back({p, acc.percentile(p)});
  if (acc.histogram()) {
    s.histogram = *acc.histogram();
  } else if (acc.mode() == StatsMode::kExact) {
    s.histogram = Histogram(acc.min(), acc.max(), kHistogramBins);
    for (double v : acc.values()) s.histogram.add(v);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Archive pass

namespace {

struct SampleValues {
  bool used = false;
  std::vector<double> values;
};

SampleValues summed_map_values(const archive::ArchiveReader& reader,
                               std::uint64_t id, schemes::SchemeId scheme,
                               std::int32_t class_id) {
  const archive::SampleRecord r = reader.read(id);
  const std::int32_t cls = class_id == kPerTrueClass ? r.true_class : class_id;
  if (cls < 0 || !r.has_grads(cls)) return {};
  const auto stack = schemes::weighted_features(scheme, r, cls);
  return {true, campipe::compose_raw(stack).values};
}

}  // namespace

DistributionStats collect_stats(const archive::ArchiveReader& reader,
                                schemes::SchemeId scheme, std::int32_t class_id,
                                const CollectOptions& options) {
  const auto& ids = reader.sample_ids();
  std::uint64_t used = 0;
  StatsAccumulator acc(options.mode, std::nullopt, options.compression);
  auto map = [&](std::uint64_t id) {
    return summed_map_values(reader, id, scheme, class_id);
  };
  parallel::ordered_map_reduce(ids, options.workers, map, [&](SampleValues&& sv) {
    if (!sv.used) return;
    ++used;
    acc.add(sv.values);
  });
  if (acc.count() == 0) {
    throw Error(ErrorKind::kEmptyStats,
                "no samples carry gradients for class " +
                    (class_id == kPerTrueClass ? std::string("(true class)")
                                               : std::to_string(class_id)));
  }
  DistributionStats stats = finalize(acc, options.percentiles);
  if (options.mode == StatsMode::kSketch) {
    // Second pass: bin edges are only known once min/max are.
    Histogram hist(stats.min, stats.max, kHistogramBins);
    parallel::ordered_map_reduce(ids, options.workers, map, [&](SampleValues&& sv) {
      for (double v : sv.values) hist.add(v);
    });
    stats.histogram = std::move(hist);
  }
  stats.class_id = class_id;
  stats.scheme = scheme;
  stats.samples_used = used;
  stats.samples_skipped = ids.size() - used;
  stats.source_split = reader.manifest().dataset_split;
  return stats;
}

// ---------------------------------------------------------------------------
// JSON

const DistributionStats* StatsFile::find(std::int32_t class_id) const {
  for (const auto& e : entries) {
    if (e.class_id == class_id) return &e;
  }
  for (const auto& e : entries) {
    if (e.class_id == kPerTrueClass) return &e;
  }
  return nullptr;
}

std::string stats_to_json(const StatsFile& file) {
  json doc;
  doc["format"] = "ifa-stats";
  doc["format_version"] = 1;
  json list = json::array();
  for (const auto& s : file.entries) {
    json e;
    e["class_id"] = s.class_id;
    e["scheme"] = schemes::to_string(s.scheme);
    e["mode"] = to_string(s.mode);
    e["source_split"] = archive::to_string(s.source_split);
    e["count"] = s.count;
    e["samples_used"] = s.samples_used;
    e["samples_skipped"] = s.samples_skipped;
    e["mean"] = s.mean;
    e["std"] = s.std;
    e["min"] = s.min;
    e["max"] = s.max;
    json pcts = json::array();
    for (const auto& pv : s.percentiles) pcts.push_back({{"p", pv.p}, {"value", pv.value}});
    e["percentiles"] = std::move(pcts);
    e["histogram"] = {{"lo", s.histogram.lo},
                      {"hi", s.histogram.hi},
                      {"counts", s.histogram.counts}};
    list.push_back(std::move(e));
  }
  doc["entries"] = std::move(list);
  return doc.dump(2) + "\n";
}

StatsFile stats_from_json(const std::string& text) {
  StatsFile file;
  try {
    const json doc = json::parse(text);
    if (doc.value("format", "") != "ifa-stats") {
      throw Error(ErrorKind::kBadMagic, "not an ifa stats document");
    }
    for (const auto& e : doc.at("entries")) {
      DistributionStats s;
      s.class_id = e.at("class_id").get<std::int32_t>();
      s.scheme = schemes::parse_scheme(e.at("scheme").get<std::string>());
      s.mode = parse_stats_mode(e.at("mode").get<std::string>());
      s.source_split = archive::parse_split(e.at("source_split").get<std::string>());
      s.count = e.at("count").get<std::uint64_t>();
      s.samples_used = e.value("samples_used", std::uint64_t{0});
      s.samples_skipped = e.value("samples_skipped", std::uint64_t{0});
      s.mean = e.at("mean").get<double>();
      s.std = e.at("std").get<double>();
      s.min = e.at("min").get<double>();
      s.max = e.at("max").get<double>();
      for (const auto& pv : e.at("percentiles")) {
        s.percentiles.push_back({pv.at("p").get<double>(), pv.at("value").get<double>()});
      }
      const auto& h = e.at("histogram");
      s.histogram.lo = h.at("lo").get<double>();
      s.histogram.hi = h.at("hi").get<double>();
      s.histogram.counts = h.at("counts").get<std::vector<std::uint64_t>>();
      file.entries.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kMalformed, std::string("stats document: ") + e.what());
  }
  return file;
}

}  // namespace ifa::distribution
