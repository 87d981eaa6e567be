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

#include <cmath>
#include <random>

#include <json.hpp>

#include "helpers.hpp"
#include "ifa/eval.hpp"
#include "ifa/io.hpp"

using namespace ifa;
using namespace ifa::eval;

namespace {

archive::HeadSpec identity_head() {
  archive::HeadSpec h;
  h.kind = archive::HeadKind::kGapLinear;
  h.rows = 2;
  h.cols = 2;
  h.weights = {1, 0, 0, 1};
  h.bias = {0, 0};
  return h;
}

// Two 2x2 feature maps with spatial means 2 and 3.
const std::vector<float> kFeatures{1, 3, 2, 2, 3, 3, 3, 3};

archive::SampleRecord labelled(std::uint64_t id, std::int32_t gt, std::vector<float> features) {
  archive::SampleRecord r;
  r.sample_id = id;
  r.true_class = gt;
  r.dims = {2, 2};
  r.num_features = 2;
  r.features = std::move(features);
  r.logits = {0, 0};
  return r;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("correlation of linear and monotone pairs") {
  const std::vector<double> x{1, 2, 3};
  CHECK(pearson(x, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
  const std::vector<double> cubes{1, 8, 27};
  CHECK(spearman(x, cubes) == doctest::Approx(1.0));
  CHECK(pearson(x, cubes) < 1.0);
  CHECK(pearson(x, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
}

TEST_CASE("constant series are degenerate") {
  try {
    pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3});
    FAIL("expected degenerate");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerate);
  }
  CHECK_THROWS_AS(consistency(std::vector<double>{1, 2, 3}, std::vector<double>{4, 4, 4}), Error);
  CHECK_THROWS_AS(consistency(std::vector<double>{1, 2}, std::vector<double>{1, 2}), Error);
  CHECK_THROWS_AS(consistency(std::vector<double>{1, 2, NAN}, std::vector<double>{1, 2, 3}),
                  Error);
}

TEST_CASE("average ranks share ties") {
  CHECK(average_ranks(std::vector<double>{10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
}

TEST_CASE("jarque-bera against a hand computation") {
  const std::vector<double> x{1, 2, 3, 4, 10};
  // Population moments computed directly.
  double mean = 0;
  for (double v : x) mean += v;
  mean /= 5;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d / 5;
    m3 += d * d * d / 5;
    m4 += d * d * d * d / 5;
  }
  const double s = m3 / std::pow(m2, 1.5), k = m4 / (m2 * m2);
  const double jb = 5 * (s * s / 6 + (k - 3) * (k - 3) / 24);
  const auto t = jarque_bera(x);
  CHECK(t.statistic == doctest::Approx(jb).epsilon(1e-12));
  CHECK(t.p_value == doctest::Approx(std::exp(-jb / 2)).epsilon(1e-12));
}

TEST_CASE("property: spearman is invariant under increasing transforms") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist;
  std::vector<double> x(300), y(300);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = dist(rng);
    y[i] = x[i] + 0.5 * dist(rng);
  }
  const auto sigma = campipe::sigma_from_percentiles(-1.0, 1.0);
  std::vector<double> sx(x);
  campipe::apply_sigma(sx, sigma);
  CHECK(average_ranks(sx) == average_ranks(x));
  CHECK(spearman(sx, y) == spearman(x, y));
  std::vector<double> ey(y);
  for (auto& v : ey) v = std::exp(v);
  CHECK(spearman(x, ey) == spearman(x, y));
}

TEST_CASE("consistency report selects a coefficient and serializes") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> dist;
  std::vector<double> a(500), b(500);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = dist(rng);
    b[i] = 2 * a[i] + 0.1 * dist(rng);
  }
  auto r = consistency(a, b);
  CHECK(r.n == 500);
  CHECK(r.selected == Coefficient::kPearson);
  CHECK(r.pearson >= -1.0);
  CHECK(r.pearson <= 1.0);

  std::vector<double> skewed(a);
  for (auto& v : skewed) v = std::exp(2 * v);
  const auto s = consistency(skewed, b);
  CHECK(s.selected == Coefficient::kSpearman);
  CHECK(s.selected_value() == s.spearman);

  r.sample_ids.assign(500, 0);
  r.cam_sums = a;
  r.logits = b;
  const auto doc = nlohmann::json::parse(r.to_json());
  CHECK(doc.at("selection_rule") == kSelectionRule);
  CHECK(r.to_csv().rfind("sample_id,cam_sum,logit\n", 0) == 0);
}

TEST_CASE("replay through an identity head") {
  const auto head = identity_head();
  const auto full = replay_logits(head, kFeatures, 2, std::vector<std::uint8_t>{1, 1});
  CHECK(full == std::vector<double>{2, 3});
  const auto blocked = replay_logits(head, kFeatures, 2, std::vector<std::uint8_t>{1, 0});
  CHECK(blocked == std::vector<double>{2, 0});

  auto external = head;
  external.kind = archive::HeadKind::kExternal;
  try {
    replay_logits(external, kFeatures, 2, std::vector<std::uint8_t>{1, 1});
    FAIL("expected unsupported");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUnsupported);
  }
  CHECK_THROWS_AS(replay_logits(head, kFeatures, 2, std::vector<std::uint8_t>{1}), Error);
}

TEST_CASE("flatten head replay zeroes masked blocks") {
  archive::HeadSpec h;
  h.kind = archive::HeadKind::kFlattenLinear;
  h.rows = 1;
  h.cols = 8;
  h.weights = {1, 1, 1, 1, 10, 10, 10, 10};
  h.bias = {0.5};
  CHECK(replay_logits(h, kFeatures, 2, std::vector<std::uint8_t>{1, 1}) ==
        std::vector<double>{8 + 120 + 0.5});
  CHECK(replay_logits(h, kFeatures, 2, std::vector<std::uint8_t>{0, 1}) ==
        std::vector<double>{120.5});
}

TEST_CASE("argmax ties go to the lower index") {
  CHECK(argmax(std::vector<double>{1, 3, 3}) == 1);
  CHECK(argmax(std::vector<float>{0, 0}) == 0);
}

TEST_CASE("masked accuracy on a small replayable archive") {
  testing::TempDir dir;
  auto m = testing::small_manifest(2, 2);
  m.head = identity_head();
  std::vector<archive::SampleRecord> recs{labelled(0, 1, kFeatures),
                                          labelled(1, 0, {5, 5, 5, 5, 1, 1, 1, 1}),
                                          labelled(2, -1, kFeatures),
                                          labelled(3, 0, kFeatures)};
  archive::write_archive(m, recs, dir.path());
  archive::ArchiveReader reader(dir.path());

  const auto all = masked_accuracy(reader, importance::all_ones_mask(2, 2));
  CHECK(all.n == 3);
  CHECK(all.accuracy_all == doctest::Approx(2.0 / 3.0));
  CHECK(all.accuracy_principal == all.accuracy_all);
  CHECK(all.sample_ids == std::vector<std::uint64_t>{0, 1, 3});

  // All-zero mask with zero bias: every prediction is class 0.
  importance::FeatureMask zeros = importance::all_ones_mask(2, 2).complement();
  const auto z = masked_accuracy(reader, zeros, 2);
  for (auto p : z.predicted_principal) CHECK(p == 0);
  CHECK(z.accuracy_principal == doctest::Approx(2.0 / 3.0));
  CHECK(z.accuracy_nonprincipal == all.accuracy_all);

  auto ext = m;
  ext.head = archive::HeadSpec{};
  ext.head->kind = archive::HeadKind::kExternal;
  testing::TempDir dir2;
  archive::write_archive(ext, recs, dir2.path());
  CHECK_THROWS_AS(masked_accuracy(archive::ArchiveReader(dir2.path()), zeros), Error);
}

TEST_CASE("all-zero mask on a balanced binary set gives 0.5") {
  testing::TempDir dir;
  auto m = testing::small_manifest(2, 2);
  m.head = identity_head();
  std::vector<archive::SampleRecord> recs;
  for (std::uint64_t i = 0; i < 10; ++i) {
    recs.push_back(labelled(i, static_cast<std::int32_t>(i % 2), kFeatures));
  }
  archive::write_archive(m, recs, dir.path());
  const auto r = masked_accuracy(archive::ArchiveReader(dir.path()),
                                 importance::all_ones_mask(2, 2).complement());
  CHECK(r.accuracy_principal == 0.5);
}

TEST_CASE("mask normalization") {
  std::vector<double> ones(4, 1.0);
  normalize_mask(ones);
  CHECK(ones == std::vector<double>{1, 1, 1, 1});
  std::vector<double> neg{-1, -0.5, -2, -3};
  normalize_mask(neg);
  CHECK(neg == std::vector<double>{0, 0, 0, 0});
  std::vector<double> ramp{-1, 1, 2, 3};
  normalize_mask(ramp, 0.5);
  CHECK(ramp == std::vector<double>{0, 0, 2.0 / 3.0, 1});
}

TEST_CASE("mask jobs cover every CAM and are readable back") {
  testing::TempDir dir, out;
  std::mt19937_64 rng(8);
  std::vector<archive::SampleRecord> recs;
  for (std::uint64_t i = 0; i < 10; ++i) {
    auto r = testing::random_record(rng, 100 + i, 0, 1, 2, 2, 2, {0});
    r.input = archive::InputImage{1, 4, 4, std::vector<float>(16, 0.5f)};
    recs.push_back(r);
  }
  archive::write_archive(testing::small_manifest(1, 2), recs, dir.path());
  archive::ArchiveReader reader(dir.path());

  std::vector<campipe::CamResult> cams;
  for (const auto& r : recs) {
    campipe::CamResult c;
    c.sample_id = r.sample_id;
    c.class_id = 0;
    c.scale_mode = campipe::ScaleMode::kIndividual;
    c.map = campipe::Map{{2, 2}, r.sample_id % 2 ? std::vector<double>{1, 1, 1, 1}
                                                 : std::vector<double>{-1, -2, -3, -4}};
    cams.push_back(c);
  }
  const auto manifest = emit_mask_jobs(cams, reader, out.path());
  REQUIRE(manifest.jobs.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(manifest.jobs[i].sample_id == 100 + i);
    const auto mask = campipe::read_cam(out / manifest.jobs[i].mask_file);
    CHECK(mask.map.dims == archive::Dims{4, 4});
    const double expected = (100 + i) % 2 ? 1.0 : 0.0;
    for (double v : mask.map.values) CHECK(v == expected);
  }
  const auto back = job_manifest_from_json(io::read_text(out / "manifest.json"));
  CHECK(back.jobs.size() == 10);
  CHECK(back.jobs[3].mask_file == manifest.jobs[3].mask_file);
}

TEST_CASE("mask jobs need inputs") {
  testing::TempDir dir, out;
  std::mt19937_64 rng(9);
  std::vector<archive::SampleRecord> recs{testing::random_record(rng, 0, 0, 1, 2, 2, 2, {0})};
  archive::write_archive(testing::small_manifest(1, 2), recs, dir.path());
  archive::ArchiveReader reader(dir.path());
  campipe::CamResult c;
  c.map = campipe::Map{{2, 2}, {1, 1, 1, 1}};
  CHECK_THROWS_AS(emit_mask_jobs(std::span(&c, 1), reader, out.path()), Error);
}

TEST_CASE("increase and drop formulas") {
  const std::vector<ConfidencePair> drop{{0, 0.8, 0.6}};
  const auto a = collect_inc_drop(drop);
  CHECK(a.average_drop == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(a.average_increase == 0.0);

  const std::vector<ConfidencePair> inc{{0, 0.8, 0.9}};
  const auto b = collect_inc_drop(inc);
  CHECK(b.average_drop == 0.0);
  CHECK(b.average_increase == 100.0);

  const std::vector<ConfidencePair> same{{0, 0.5, 0.5}, {1, 0.25, 0.25}};
  const auto c = collect_inc_drop(same);
  CHECK(c.average_drop == 0.0);
  CHECK(c.average_increase == 0.0);

  // Binary-exact table: drops 50% and 0%, one increase of two.
  const std::vector<ConfidencePair> mixed{{0, 0.5, 0.25}, {1, 0.5, 0.75}};
  const auto d = collect_inc_drop(mixed);
  CHECK(d.average_drop == 25.0);
  CHECK(d.average_increase == 50.0);

  CHECK_THROWS_AS(collect_inc_drop(std::vector<ConfidencePair>{{0, 0.0, 0.5}}), Error);
}

TEST_CASE("property: drop vanishes when confidence never falls") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<ConfidencePair> pairs;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const double y = u(rng);
    pairs.push_back({i, y, y + (1.0 - y) * u(rng)});
  }
  const auto r = collect_inc_drop(pairs);
  CHECK(r.average_drop == 0.0);
  CHECK(r.average_increase >= 0.0);
  CHECK(r.average_increase <= 100.0);
}

TEST_CASE("results documents in both accepted shapes") {
  const auto a = results_from_json(R"([{"sample_id": 3, "Y": 0.8, "O": 0.6}])");
  REQUIRE(a.size() == 1);
  CHECK(a[0].sample_id == 3);
  CHECK(a[0].original == 0.8);
  CHECK(a[0].masked == 0.6);
  const auto b = results_from_json(R"({"results": [{"sample_id": 1, "Y": 1, "O": 0}]})");
  CHECK(b.size() == 1);
  CHECK_THROWS_AS(results_from_json(R"([{"sample_id": 1}])"), Error);
}

}  // TEST_SUITE
