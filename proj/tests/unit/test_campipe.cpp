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
#include "ifa/io.hpp"

using namespace ifa;
using namespace ifa::campipe;
using schemes::SchemeId;

namespace {

schemes::WeightedFeatureStack two_feature_stack() {
  schemes::WeightedFeatureStack s;
  s.num_features = 2;
  s.dims = {2, 2};
  s.maps = {1, 2, 3, 4, 9, 9, 9, 9};
  return s;
}

importance::FeatureMask mask_of(std::vector<std::uint8_t> row, std::size_t classes = 1) {
  importance::FeatureMask m;
  m.num_features = row.size();
  m.per_class.assign(classes, row);
  m.rule.kind = importance::ThresholdKind::kExplicit;
  m.source = "test";
  return m;
}

Map map2x2(std::vector<double> v) { return Map{{2, 2}, std::move(v)}; }

}  // namespace

TEST_SUITE("campipe") {

TEST_CASE("sigma constants for P10=0, P90=1") {
  const auto s = sigma_from_percentiles(0.0, 1.0);
  CHECK(s.alpha == doctest::Approx(std::atanh(0.9) - std::atanh(0.1)).epsilon(1e-14));
  CHECK(s.alpha == doctest::Approx(1.37188).epsilon(1e-5));
  CHECK(s.beta == doctest::Approx(0.100335).epsilon(1e-5));
  CHECK(std::abs(s(0.0) - 0.1) <= 1e-12);
  CHECK(std::abs(s(1.0) - 0.9) <= 1e-12);
}

TEST_CASE("sigma at zero for a symmetric range") {
  const auto s = sigma_from_percentiles(-1.0, 1.0);
  CHECK(s(0.0) == doctest::Approx(std::tanh(0.786276)).epsilon(1e-6));
  CHECK(s(0.0) == doctest::Approx(0.6563).epsilon(1e-4));
}

TEST_CASE("degenerate percentiles are rejected") {
  for (auto [lo, hi] : {std::pair{2.0, 2.0}, std::pair{3.0, 1.0}}) {
    try {
      sigma_from_percentiles(lo, hi);
      FAIL("expected degenerate");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kDegenerate);
    }
  }
}

TEST_CASE("the swapped-numerator beta misses the boundary") {
  const double a9 = std::atanh(0.9), a1 = std::atanh(0.1);
  const double p10 = 0.0, p90 = 1.0;
  const double alpha = (a9 - a1) / (p90 - p10);
  const double swapped_beta = (p90 * a9 - p10 * a1) / (p10 - p90);
  CHECK(std::abs(std::tanh(alpha * p10 + swapped_beta) - 0.1) > 0.5);
}

TEST_CASE("property: sigma boundary holds for random percentile pairs") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> centre(-100.0, 100.0);
  std::uniform_real_distribution<double> log_width(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double p10 = centre(rng);
    const double p90 = p10 + std::pow(10.0, log_width(rng));
    const auto s = sigma_from_percentiles(p10, p90);
    CHECK(std::abs(s(p10) - 0.1) <= 1e-9);
    CHECK(std::abs(s(p90) - 0.9) <= 1e-9);
    CHECK(s.alpha > 0.0);
  }
}

TEST_CASE("sigma boundary survives a large offset with a narrow spread") {
  const auto s = sigma_from_percentiles(1e6, 1e6 + 1e-3);
  CHECK(std::abs(s(1e6) - 0.1) <= 1e-12);
  CHECK(std::abs(s(1e6 + 1e-3) - 0.9) <= 1e-9);
}

TEST_CASE("property: sigma is strictly increasing, bounded and never clips") {
  const auto s = sigma_from_percentiles(-2.0, 5.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> dist(-20.0, 20.0);
  std::vector<double> x(2000);
  for (auto& v : x) v = dist(rng);
  std::vector<double> y(x);
  apply_sigma(y, s);
  std::vector<std::size_t> ix(x.size()), iy(x.size());
  std::iota(ix.begin(), ix.end(), 0);
  std::iota(iy.begin(), iy.end(), 0);
  std::sort(ix.begin(), ix.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::sort(iy.begin(), iy.end(), [&](auto a, auto b) { return y[a] < y[b]; });
  CHECK(ix == iy);
  for (double v : y) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  CHECK(s(6.0) < s(7.0));
  CHECK(s(7.0) < 1.0);
}

TEST_CASE("compose with and without masks") {
  const auto stack = two_feature_stack();
  const auto full = compose_raw(stack);
  CHECK(full.values == std::vector<double>{10, 11, 12, 13});
  const auto ones = mask_of({1, 1});
  CHECK(compose_raw(stack, &ones.per_class[0]).values == full.values);
  const auto zeros = mask_of({0, 0});
  CHECK(compose_raw(stack, &zeros.per_class[0]).values == std::vector<double>{0, 0, 0, 0});
  const auto first = mask_of({1, 0});
  CHECK(compose_raw(stack, &first.per_class[0]).values == std::vector<double>{1, 2, 3, 4});
  const std::vector<std::uint8_t> short_mask{1};
  CHECK_THROWS_AS(compose_raw(stack, &short_mask), Error);
}

TEST_CASE("resize examples") {
  const auto up = resize_spatial(Map{{1, 1}, {5.0}}, 4, 4);
  CHECK(up.dims == archive::Dims{4, 4});
  for (double v : up.values) CHECK(v == 5.0);

  const auto mid = resize_spatial(map2x2({0, 1, 1, 2}), 3, 3);
  CHECK(mid.values[4] == doctest::Approx(1.0).epsilon(1e-15));

  const auto same = map2x2({0.3, -1, 7, 2});
  CHECK(resize_spatial(same, 2, 2).values == same.values);

  CHECK_THROWS_AS(resize_spatial(Map{{2, 2, 2}, std::vector<double>(8)}, 4, 4), Error);
}

TEST_CASE("property: resize output is bounded by the input") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist;
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint32_t h = 2 + trial % 5, w = 3 + trial % 4;
    Map m{{h, w}, std::vector<double>(std::size_t{h} * w)};
    for (auto& v : m.values) v = dist(rng);
    const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
    const auto out = resize_spatial(m, 7 + trial, 5 + trial % 3);
    for (double v : out.values) {
      CHECK(v >= *lo - 1e-12);
      CHECK(v <= *hi + 1e-12);
    }
  }
}

TEST_CASE("individual scaling") {
  std::vector<double> a{-1, 0, 1, 3};
  scale_individual(a);
  CHECK(a[0] == 0.0);
  CHECK(a[1] == 0.0);
  CHECK(a[2] == doctest::Approx(1.0 / 3.0));
  CHECK(a[3] == 1.0);

  std::vector<double> neg{-1, -2, -3};
  scale_individual(neg);
  CHECK(neg == std::vector<double>{0, 0, 0});

  std::vector<double> unit{0, 0.25, 1};
  scale_individual(unit);
  CHECK(unit == std::vector<double>{0, 0.25, 1});

  std::vector<double> constant{2, 2};
  scale_individual(constant);
  CHECK(constant == std::vector<double>{0, 0});
}

TEST_CASE("common scaling is monotone across samples, individual is not") {
  const auto sigma = sigma_from_percentiles(0.0, 4.0);
  // A >= B elementwise.
  std::vector<double> a{1, 2, 4, 8}, b{1, 2, 3, 2};
  std::vector<double> sa(a), sb(b);
  apply_sigma(sa, sigma);
  apply_sigma(sb, sigma);
  for (std::size_t i = 0; i < 4; ++i) CHECK(sa[i] >= sb[i]);

  std::vector<double> ia(a), ib(b);
  scale_individual(ia);
  scale_individual(ib);
  bool violated = false;
  for (std::size_t i = 0; i < 4; ++i) violated = violated || ia[i] < ib[i];
  CHECK(violated);
}

TEST_CASE("names follow the S- and FS- prefixes") {
  CamResult cam;
  cam.scheme = SchemeId::kGradCam;
  CHECK(cam.name() == "grad-cam");
  cam.scale_mode = ScaleMode::kCommon;
  CHECK(cam.name() == "S-grad-cam");
  cam.mask_provenance = "top_pct(5)";
  CHECK(cam.name() == "FS-S-grad-cam");
  CHECK(parse_scale_mode("individual") == ScaleMode::kIndividual);
  CHECK_THROWS_AS(parse_scale_mode("minmax"), Error);
}

TEST_CASE("generate_one runs mask, sum, resize, scale in order") {
  archive::SampleRecord r;
  r.sample_id = 9;
  r.true_class = 0;
  r.dims = {2, 2};
  r.num_features = 2;
  r.logits = {0, 0};
  r.features = {1, 2, 3, 4, 1, 1, 1, 1};
  r.grads[0] = std::vector<float>(8, 1.0f);
  const auto sigma = sigma_from_percentiles(0.0, 10.0);

  const auto raw = generate_one(r, SchemeId::kGradCam, 0, ScaleMode::kRaw, nullptr, nullptr,
                                std::nullopt);
  CHECK(raw.map.values == std::vector<double>{2, 3, 4, 5});
  CHECK(raw.sum == 14.0);

  const auto single = mask_of({1, 0});
  const auto fs = generate_one(r, SchemeId::kGradCam, 0, ScaleMode::kCommon, &sigma, &single,
                               std::pair{4u, 4u});
  Map expected = resize_spatial(map2x2({1, 2, 3, 4}), 4, 4);
  apply_sigma(expected.values, sigma);
  CHECK(fs.map.values == expected.values);
  CHECK(fs.name() == "FS-S-grad-cam");

  const auto s = generate_one(r, SchemeId::kGradCam, 0, ScaleMode::kCommon, &sigma, nullptr,
                              std::pair{4u, 4u});
  const auto ones = mask_of({1, 1});
  const auto fs_ones = generate_one(r, SchemeId::kGradCam, 0, ScaleMode::kCommon, &sigma, &ones,
                                    std::pair{4u, 4u});
  CHECK(fs_ones.map.values == s.map.values);

  CHECK_THROWS_AS(generate_one(r, SchemeId::kGradCam, 0, ScaleMode::kCommon, nullptr, nullptr,
                               std::nullopt),
                  Error);
}

TEST_CASE("constant raw map at P90 becomes constant 0.9") {
  archive::SampleRecord r;
  r.sample_id = 1;
  r.true_class = 0;
  r.dims = {2, 2};
  r.num_features = 1;
  r.logits = {0, 0};
  r.features = {2, 2, 2, 2};
  r.grads[0] = std::vector<float>(4, 1.5f);
  const auto sigma = sigma_from_percentiles(-1.0, 3.0);
  const auto cam = generate_one(r, SchemeId::kGradCam, 0, ScaleMode::kCommon, &sigma, nullptr,
                                std::nullopt);
  for (double v : cam.map.values) CHECK(std::abs(v - 0.9) <= 1e-9);
}

TEST_CASE("generate over an archive streams ascending ids and honours stats") {
  testing::TempDir dir;
  std::mt19937_64 rng(4);
  std::vector<archive::SampleRecord> recs;
  for (std::uint64_t i = 0; i < 8; ++i) {
    recs.push_back(testing::random_record(rng, 20 - i, static_cast<std::int32_t>(i % 2), 3, 2,
                                          3, 3, {0, 1}));
  }
  recs[3].true_class = -1;
  archive::write_archive(testing::small_manifest(3, 2), recs, dir.path());
  archive::ArchiveReader reader(dir.path());

  GenerateOptions opts;
  CHECK_THROWS_AS(generate(reader, SchemeId::kGradCam, opts, [](CamResult&&) {}), Error);

  distribution::StatsFile stats;
  for (std::int32_t c = 0; c < 2; ++c) {
    auto st = distribution::collect_stats(reader, SchemeId::kGradCam, c);
    stats.entries.push_back(st);
  }
  opts.stats = &stats;
  std::vector<std::uint64_t> ids;
  std::vector<CamResult> serial;
  generate(reader, SchemeId::kGradCam, opts, [&](CamResult&& c) {
    ids.push_back(c.sample_id);
    serial.push_back(std::move(c));
  });
  CHECK(ids.size() == 7);
  CHECK(std::is_sorted(ids.begin(), ids.end()));

  opts.workers = 4;
  std::vector<CamResult> parallel;
  generate(reader, SchemeId::kGradCam, opts, [&](CamResult&& c) { parallel.push_back(std::move(c)); });
  REQUIRE(parallel.size() == serial.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(encode_cam(parallel[i]) == encode_cam(serial[i]));
  }

  auto wrong = stats;
  for (auto& e : wrong.entries) e.scheme = SchemeId::kXGradCam;
  opts.stats = &wrong;
  CHECK_THROWS_AS(generate(reader, SchemeId::kGradCam, opts, [](CamResult&&) {}), Error);
}

TEST_CASE("cam files and index round trip") {
  testing::TempDir dir;
  CamResult cam;
  cam.sample_id = 12;
  cam.class_id = 1;
  cam.scheme = SchemeId::kXGradCam;
  cam.scale_mode = ScaleMode::kIndividual;
  cam.map = Map{{2, 3}, {0, 0.25, 0.5, 0.75, 1, 0.125}};
  cam.sum = cam.map.sum();

  const auto bytes = encode_cam(cam);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ICM1");
  CHECK(bytes.size() == 4 + 8 + 4 + 1 + 8 + 6 * 4);
  const auto back = decode_cam(bytes, "t");
  CHECK(back.map.values == cam.map.values);
  CHECK(back.map.dims == cam.map.dims);
  CHECK(back.scale_mode == ScaleMode::kIndividual);

  CamWriter writer(dir.path());
  writer.add(cam);
  writer.finish("arch");
  const auto index = read_cam_index(dir.path());
  CHECK(index.archive_id == "arch");
  CHECK(index.name == "xgrad-cam");
  REQUIRE(index.entries.size() == 1);
  CHECK(index.entries[0].sum == cam.sum);
  CHECK(read_cam(index.entries[0].file).map.values == cam.map.values);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_cam(bad, "t"), Error);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_cam(bad, "t"), Error);
}

}  // TEST_SUITE
