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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "ifa/campipe.hpp"
#include "ifa/distribution.hpp"
#include "ifa/schemes.hpp"

using namespace ifa;
using namespace ifa::distribution;

namespace {

StatsAccumulator exact_of(std::span<const double> values) {
  StatsAccumulator acc(StatsMode::kExact);
  acc.add(values);
  return acc;
}

// Reference percentile straight from the definition.
double reference_type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double rank = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST_SUITE("distribution") {

TEST_CASE("type-7 percentiles of 1..100") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  const auto acc = exact_of(v);
  CHECK(acc.percentile(10) == doctest::Approx(10.9).epsilon(1e-12));
  CHECK(acc.percentile(90) == doctest::Approx(90.1).epsilon(1e-12));
  CHECK(acc.percentile(50) == doctest::Approx(50.5).epsilon(1e-12));
}

TEST_CASE("constant stream") {
  const std::vector<double> v(37, 5.0);
  const auto s = finalize(exact_of(v), default_percentiles());
  CHECK(s.min == 5.0);
  CHECK(s.max == 5.0);
  CHECK(s.mean == 5.0);
  CHECK(s.std == 0.0);
  CHECK(s.percentile(10) == 5.0);
  CHECK(s.percentile(90) == 5.0);
  CHECK(s.histogram.total() == 37);
}

TEST_CASE("merging two accumulators gives exact moments") {
  const auto m = merge_stats(exact_of(std::vector<double>{1, 2}),
                             exact_of(std::vector<double>{3, 4}));
  CHECK(m.count() == 4);
  CHECK(m.mean() == 2.5);
  CHECK(m.min() == 1.0);
  CHECK(m.max() == 4.0);
  CHECK(m.variance() == doctest::Approx(1.25));
}

TEST_CASE("empty accumulator is the merge identity") {
  const auto x = exact_of(std::vector<double>{3, -1, 7.5});
  for (const auto& m : {merge_stats(StatsAccumulator(StatsMode::kExact), x),
                        merge_stats(x, StatsAccumulator(StatsMode::kExact))}) {
    CHECK(m.count() == x.count());
    CHECK(m.mean() == x.mean());
    CHECK(m.m2() == x.m2());
    CHECK(m.min() == x.min());
    CHECK(m.max() == x.max());
    CHECK(m.percentile(50) == x.percentile(50));
  }
}

TEST_CASE("incompatible accumulators do not merge") {
  StatsAccumulator exact(StatsMode::kExact);
  StatsAccumulator sketch(StatsMode::kSketch);
  CHECK_THROWS_AS(exact.merge(sketch), Error);
  StatsAccumulator h1(StatsMode::kExact, Histogram(0, 1, 4));
  StatsAccumulator h2(StatsMode::kExact, Histogram(0, 2, 4));
  CHECK_THROWS_AS(h1.merge(h2), Error);
}

TEST_CASE("property: eight random shards reproduce single-pass exact percentiles") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> dist(0.0, 3.0);
  std::vector<double> v(20000);
  for (auto& x : v) x = dist(rng);
  const auto single = exact_of(v);

  std::vector<StatsAccumulator> shards(8, StatsAccumulator(StatsMode::kExact));
  std::uniform_int_distribution<int> pick(0, 7);
  for (double x : v) shards[static_cast<std::size_t>(pick(rng))].add(x);
  StatsAccumulator merged(StatsMode::kExact);
  for (const auto& s : shards) merged.merge(s);

  CHECK(merged.count() == single.count());
  CHECK(merged.min() == single.min());
  CHECK(merged.max() == single.max());
  for (double p : default_percentiles()) {
    CHECK(merged.percentile(p) == single.percentile(p));
    CHECK(single.percentile(p) == reference_type7(v, p));
  }
}

TEST_CASE("property: exact percentiles are permutation invariant") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> dist(-5.0, 5.0);
  std::vector<double> v(5001);
  for (auto& x : v) x = dist(rng);
  const auto a = exact_of(v);
  std::shuffle(v.begin(), v.end(), rng);
  const auto b = exact_of(v);
  for (double p : default_percentiles()) CHECK(a.percentile(p) == b.percentile(p));
}

TEST_CASE("sketch percentiles stay within 1% of the range") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(200000);
  for (auto& x : v) x = dist(rng);
  StatsAccumulator sketch(StatsMode::kSketch);
  sketch.add(v);
  const auto exact = exact_of(v);
  const double range = exact.max() - exact.min();
  for (double p : default_percentiles()) {
    CHECK(std::abs(sketch.percentile(p) - exact.percentile(p)) <= 0.01 * range);
  }
}

TEST_CASE("t-digest memory stays bounded and merged digests agree") {
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> dist(1.0);
  TDigest whole(100), left(100), right(100);
  for (int i = 0; i < 100000; ++i) {
    const double x = dist(rng);
    whole.add(x);
    (i % 2 == 0 ? left : right).add(x);
  }
  left.merge(right);
  CHECK(whole.centroid_count() <= 200);
  CHECK(left.total_weight() == whole.total_weight());
  CHECK(left.quantile(0.5) == doctest::Approx(std::log(2.0)).epsilon(0.02));
  CHECK(whole.quantile(0.9) == doctest::Approx(std::log(10.0)).epsilon(0.02));
}

TEST_CASE("property: finalized stats are ordered and histograms sum to count") {
  std::mt19937_64 rng(31);
  std::lognormal_distribution<double> dist(0.0, 1.5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> v(1000 + 97 * trial);
    for (auto& x : v) x = dist(rng) * (trial % 2 == 0 ? 1.0 : -1.0);
    const auto s = finalize(exact_of(v), default_percentiles());
    CHECK(s.min <= s.percentile(10));
    CHECK(s.percentile(10) <= s.percentile(50));
    CHECK(s.percentile(50) <= s.percentile(90));
    CHECK(s.percentile(90) <= s.max);
    CHECK(s.histogram.total() == s.count);
    CHECK(s.histogram.counts.size() == kHistogramBins);
  }
}

TEST_CASE("sigma built from any finalized stats meets the boundary") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> dist(0.3, 2.0);
  std::vector<double> v(999);
  for (auto& x : v) x = dist(rng);
  const auto s = finalize(exact_of(v), default_percentiles());
  const auto sigma = campipe::sigma_from_percentiles(s.percentile(10), s.percentile(90));
  CHECK(std::abs(sigma(s.percentile(10)) - 0.1) <= 1e-9);
  CHECK(std::abs(sigma(s.percentile(90)) - 0.9) <= 1e-9);
}

TEST_CASE("collect_stats covers every value of the summed maps") {
  testing::TempDir dir;
  std::mt19937_64 rng(3);
  std::vector<archive::SampleRecord> recs;
  for (std::uint64_t i = 0; i < 6; ++i) {
    recs.push_back(testing::random_record(rng, i, static_cast<std::int32_t>(i % 2), 2, 2, 3, 4,
                                          i == 5 ? std::vector<std::int32_t>{}
                                                 : std::vector<std::int32_t>{0, 1}));
  }
  archive::write_archive(testing::small_manifest(2, 2), recs, dir.path());
  archive::ArchiveReader reader(dir.path());

  // Oracle: sum the weighted stack by hand for every sample with grads.
  std::vector<double> values;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto stack = schemes::weighted_features(schemes::SchemeId::kGradCam, recs[i], 1);
    for (std::size_t s = 0; s < 12; ++s) values.push_back(stack.maps[s] + stack.maps[12 + s]);
  }
  CollectOptions opts;
  const auto st = collect_stats(reader, schemes::SchemeId::kGradCam, 1, opts);
  CHECK(st.count == values.size());
  CHECK(st.samples_used == 5);
  CHECK(st.samples_skipped == 1);
  CHECK(st.percentile(10) == reference_type7(values, 10));
  CHECK(st.percentile(90) == reference_type7(values, 90));

  opts.workers = 4;
  const auto par = collect_stats(reader, schemes::SchemeId::kGradCam, 1, opts);
  StatsFile a{{st}}, b{{par}};
  CHECK(stats_to_json(a) == stats_to_json(b));
}

TEST_CASE("collect_stats without usable samples is an empty-stats error") {
  testing::TempDir dir;
  std::mt19937_64 rng(3);
  std::vector<archive::SampleRecord> recs{testing::random_record(rng, 0, 0, 1, 2, 2, 2, {})};
  archive::write_archive(testing::small_manifest(1, 2), recs, dir.path());
  archive::ArchiveReader reader(dir.path());
  try {
    collect_stats(reader, schemes::SchemeId::kGradCam, 0);
    FAIL("expected empty stats");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEmptyStats);
  }
}

TEST_CASE("stats json round trip") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  auto s = finalize(exact_of(v), default_percentiles());
  s.class_id = 1;
  s.scheme = schemes::SchemeId::kXGradCam;
  s.source_split = archive::DatasetSplit::kTrain;
  StatsFile file{{s}};
  const auto back = stats_from_json(stats_to_json(file));
  REQUIRE(back.entries.size() == 1);
  const auto* e = back.find(1);
  REQUIRE(e != nullptr);
  CHECK(e->percentile(10) == s.percentile(10));
  CHECK(e->percentile(90) == s.percentile(90));
  CHECK(e->histogram.counts == s.histogram.counts);
  CHECK(e->scheme == schemes::SchemeId::kXGradCam);
  CHECK(back.find(0) == nullptr);
  CHECK(stats_to_json(back) == stats_to_json(file));
}

}  // TEST_SUITE
