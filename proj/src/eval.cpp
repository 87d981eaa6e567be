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

#include "ifa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ifa/parallel.hpp"

namespace ifa::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_paired(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorKind::kShapeMismatch, "correlation series differ in length");
  }
}

}  // namespace

NormalityTest jarque_bera(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 3) throw Error(ErrorKind::kInvalidArgument, "Jarque-Bera needs n >= 3");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (m2 <= 0.0) throw Error(ErrorKind::kDegenerate, "Jarque-Bera of a constant series");
  const double skew = m3 / std::pow(m2, 1.5);
  const double kurt = m4 / (m2 * m2);
  NormalityTest t;
  t.statistic = n * (skew * skew / 6.0 + (kurt - 3.0) * (kurt - 3.0) / 24.0);
  t.p_value = std::exp(-t.statistic / 2.0);
  return t;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_paired(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw Error(ErrorKind::kDegenerate, "correlation undefined for a constant series");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  require_paired(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

std::string to_string(Coefficient c) {
  return c == Coefficient::kPearson ? "pearson" : "spearman";
}

ConsistencyReport consistency(std::span<const double> cam_sums,
                              std::span<const double> logits) {
  require_paired(cam_sums, logits);
  if (cam_sums.size() < 3) {
    throw Error(ErrorKind::kInvalidArgument, "consistency needs at least 3 samples");
  }
  auto finite = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
  };
  if (!finite(cam_sums) || !finite(logits)) {
    throw Error(ErrorKind::kInvalidArgument, "consistency series must be finite");
  }
  ConsistencyReport r;
  r.n = cam_sums.size();
  r.pearson = pearson(cam_sums, logits);
  r.spearman = spearman(cam_sums, logits);
  r.normality_cam = jarque_bera(cam_sums);
  r.normality_logit = jarque_bera(logits);
  r.selected = (r.normality_cam.p_value > 0.05 && r.normality_logit.p_value > 0.05)
                   ? Coefficient::kPearson
                   : Coefficient::kSpearman;
  r.cam_sums.assign(cam_sums.begin(), cam_sums.end());
  r.logits.assign(logits.begin(), logits.end());
  return r;
}

std::string ConsistencyReport::to_json() const {
  json doc;
  doc["class_id"] = class_id;
  doc["scheme"] = scheme;
  doc["scale_mode"] = scale_mode;
  doc["n"] = n;
  doc["pearson"] = pearson;
  doc["spearman"] = spearman;
  doc["normality"] = {
      {"cam_sum", {{"jarque_bera", normality_cam.statistic}, {"p_value", normality_cam.p_value}}},
      {"logit", {{"jarque_bera", normality_logit.statistic}, {"p_value", normality_logit.p_value}}}};
  doc["selected_coefficient"] = eval::to_string(selected);
  doc["selected_value"] = selected_value();
  doc["selection_rule"] = kSelectionRule;
  return doc.dump(2) + "\n";
}

std::string ConsistencyReport::to_csv() const {
  std::ostringstream out;
  out << "sample_id,cam_sum,logit\n";
  for (std::size_t i = 0; i < cam_sums.size(); ++i) {
    out << (i < sample_ids.size() ? sample_ids[i] : i) << ','
        << io::format_significant(cam_sums[i], 17) << ','
        << io::format_significant(logits[i], 17) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

namespace {

double replay_one(const archive::HeadSpec& head, std::span<const float> features,
                  std::size_t num_features, std::span<const std::uint8_t> mask,
                  std::size_t c) {
  const std::size_t s = features.size() / num_features;
  double logit = head.bias[c];
  if (head.kind == archive::HeadKind::kGapLinear) {
    for (std::size_t f = 0; f < num_features; ++f) {
      if (!mask[f]) continue;
      double mean = 0.0;
      for (std::size_t i = 0; i < s; ++i) mean += features[f * s + i];
      mean /= static_cast<double>(s);
      logit += head.weight(c, f) * mean;
    }
  } else {
    for (std::size_t f = 0; f < num_features; ++f) {
      if (!mask[f]) continue;
      for (std::size_t i = 0; i < s; ++i) {
        logit += head.weight(c, f * s + i) * static_cast<double>(features[f * s + i]);
      }
    }
  }
  return logit;
}

void check_replayable(const archive::HeadSpec& head, std::span<const float> features,
                      std::size_t num_features, std::span<const std::uint8_t> mask) {
  if (!head.replayable()) {
    throw Error(ErrorKind::kUnsupported,
                "external head cannot be replayed; use the masked-input job protocol");
  }
  if (mask.size() != num_features || num_features == 0 ||
      features.size() % num_features != 0) {
    throw Error(ErrorKind::kShapeMismatch, "replay: mask/features shape mismatch");
  }
  const std::size_t expected =
      head.kind == archive::HeadKind::kGapLinear ? num_features : features.size();
  if (head.cols != expected) {
    throw Error(ErrorKind::kShapeMismatch, "replay: head width does not match features");
  }
}

}  // namespace

std::vector<double> replay_logits(const archive::HeadSpec& head,
                                  std::span<const float> features, std::size_t num_features,
                                  std::span<const std::uint8_t> mask) {
  check_replayable(head, features, num_features, mask);
  std::vector<double> logits(head.rows);
  for (std::size_t c = 0; c < head.rows; ++c) {
    logits[c] = replay_one(head, features, num_features, mask, c);
  }
  return logits;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                  values.begin());
}

std::size_t argmax(std::span<const float> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                  values.begin());
}

MaskedAccuracyReport masked_accuracy(const archive::ArchiveReader& reader,
                                     const importance::FeatureMask& mask,
                                     unsigned workers) {
  const auto& m = reader.manifest();
  if (!m.head || !m.head->replayable()) {
    throw Error(ErrorKind::kUnsupported,
                "archive head is not replayable; use the masked-input job protocol");
  }
  if (mask.num_features != m.num_features || mask.per_class.size() != m.num_classes) {
    throw Error(ErrorKind::kShapeMismatch, "mask shape does not match the archive");
  }
  const importance::FeatureMask ones = importance::all_ones_mask(m.num_features, m.num_classes);
  const importance::FeatureMask rest = mask.complement();
  const archive::HeadSpec& head = *m.head;

  struct Row {
    bool labelled = false;
    std::uint64_t id = 0;
    std::int32_t gt = -1;
    std::uint32_t pred[3] = {0, 0, 0};
  };
  auto predict = [&](const archive::SampleRecord& r, const importance::FeatureMask& fm) {
    std::vector<double> logits(m.num_classes);
    for (std::size_t c = 0; c < m.num_classes; ++c) {
      check_replayable(head, r.features, r.num_features, fm.per_class[c]);
      logits[c] = replay_one(head, r.features, r.num_features, fm.per_class[c], c);
    }
    return static_cast<std::uint32_t>(argmax(logits));
  };
  MaskedAccuracyReport report;
  report.mask_provenance = mask.rule.describe() + " from " + mask.source;
  std::size_t hits[3] = {0, 0, 0};
  parallel::ordered_map_reduce(
      reader.sample_ids(), workers,
      [&](std::uint64_t id) {
        const auto r = reader.read(id);
        Row row;
        row.id = id;
        row.gt = r.true_class;
        if (r.true_class < 0) return row;
        row.labelled = true;
        row.pred[0] = predict(r, ones);
        row.pred[1] = predict(r, mask);
        row.pred[2] = predict(r, rest);
        return row;
      },
      [&](Row&& row) {
        if (!row.labelled) return;
        report.sample_ids.push_back(row.id);
        report.true_classes.push_back(row.gt);
        report.predicted_all.push_back(row.pred[0]);
        report.predicted_principal.push_back(row.pred[1]);
        report.predicted_nonprincipal.push_back(row.pred[2]);
        for (int k = 0; k < 3; ++k) {
          if (static_cast<std::int32_t>(row.pred[k]) == row.gt) ++hits[k];
        }
      });
  report.n = report.sample_ids.size();
  if (report.n == 0) throw Error(ErrorKind::kInvalidArgument, "no labelled samples");
  const double n = static_cast<double>(report.n);
  report.accuracy_all = static_cast<double>(hits[0]) / n;
  report.accuracy_principal = static_cast<double>(hits[1]) / n;
  report.accuracy_nonprincipal = static_cast<double>(hits[2]) / n;
  return report;
}

std::string MaskedAccuracyReport::to_json() const {
  json doc;
  doc["n"] = n;
  doc["accuracy_all"] = accuracy_all;
  doc["accuracy_principal"] = accuracy_principal;
  doc["accuracy_nonprincipal"] = accuracy_nonprincipal;
  doc["mask"] = mask_provenance;
  json samples = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    samples.push_back({{"sample_id", sample_ids[i]},
                       {"true_class", true_classes[i]},
                       {"all", predicted_all[i]},
                       {"principal", predicted_principal[i]},
                       {"nonprincipal", predicted_nonprincipal[i]}});
  }
  doc["predictions"] = std::move(samples);
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Increase / drop

void normalize_mask(std::span<double> map, double threshold) {
  if (map.empty()) return;
  for (double& v : map) v = std::max(0.0, v);
  const auto [lo_it, hi_it] = std::minmax_element(map.begin(), map.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    std::fill(map.begin(), map.end(), hi > 0.0 ? 1.0 : 0.0);
  } else {
    for (double& v : map) v = (v - lo) / (hi - lo);
  }
  if (threshold > 0.0) {
    for (double& v : map) {
      if (v < threshold) v = 0.0;
    }
  }
}

std::string JobManifest::to_json() const {
  json doc;
  doc["format"] = "ifa-jobs";
  doc["archive_id"] = archive_id;
  doc["cam"] = cam_name;
  doc["threshold"] = threshold;
  json list = json::array();
  for (const auto& j : jobs) {
    list.push_back({{"sample_id", j.sample_id}, {"class", j.class_id}, {"mask", j.mask_file}});
  }
  doc["jobs"] = std::move(list);
  return doc.dump(2) + "\n";
}

JobManifest job_manifest_from_json(const std::string& text) {
  JobManifest m;
  try {
    const json doc = json::parse(text);
    if (doc.value("format", "") != "ifa-jobs") {
      throw Error(ErrorKind::kBadMagic, "not an ifa job manifest");
    }
    m.archive_id = doc.value("archive_id", "");
    m.cam_name = doc.value("cam", "");
    m.threshold = doc.value("threshold", 0.0);
    for (const auto& j : doc.at("jobs")) {
      m.jobs.push_back({j.at("sample_id").get<std::uint64_t>(), j.at("class").get<std::int32_t>(),
                        j.at("mask").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kMalformed, std::string("job manifest: ") + e.what());
  }
  return m;
}

MaskJobEmitter::MaskJobEmitter(fs::path out_dir, const archive::ArchiveReader& reader,
                               double threshold)
    : out_(std::move(out_dir)), reader_(reader), threshold_(threshold) {
  if (threshold < 0.0 || threshold > 1.0) {
    throw Error(ErrorKind::kInvalidArgument, "mask threshold must lie in [0, 1]");
  }
  io::ensure_directory(out_);
  manifest_.archive_id = reader.manifest().archive_id;
  manifest_.threshold = threshold;
}

void MaskJobEmitter::add(const campipe::CamResult& cam) {
  const archive::SampleRecord r = reader_.read(cam.sample_id);
  if (!r.input) {
    throw Error(ErrorKind::kInvalidArgument,
                "sample " + std::to_string(cam.sample_id) + " has no stored input");
  }
  campipe::CamResult job = cam;
  job.map = campipe::resize_spatial(cam.map, r.input->height, r.input->width);
  normalize_mask(job.map.values, threshold_);
  job.scale_mode = campipe::ScaleMode::kIndividual;
  job.sum = job.map.sum();
  char name[40];
  std::snprintf(name, sizeof(name), "%08llu.maskf32",
                static_cast<unsigned long long>(cam.sample_id));
  io::write_file_atomic(out_ / name, campipe::encode_cam(job));
  manifest_.jobs.push_back({cam.sample_id, cam.class_id, name});
}

JobManifest MaskJobEmitter::finish(const std::string& cam_name) {
  manifest_.cam_name = cam_name;
  io::write_text_atomic(out_ / "manifest.json", manifest_.to_json());
  return manifest_;
}

JobManifest emit_mask_jobs(std::span<const campipe::CamResult> cams,
                           const archive::ArchiveReader& reader, const fs::path& out_dir,
                           double threshold) {
  MaskJobEmitter emitter(out_dir, reader, threshold);
  for (const auto& cam : cams) emitter.add(cam);
  return emitter.finish(cams.empty() ? std::string() : cams.front().name());
}

std::vector<ConfidencePair> results_from_json(const std::string& text) {
  std::vector<ConfidencePair> out;
  try {
    const json doc = json::parse(text);
    const json& list = doc.is_array() ? doc : doc.at("results");
    for (const auto& e : list) {
      out.push_back({e.at("sample_id").get<std::uint64_t>(), e.at("Y").get<double>(),
                     e.at("O").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kMalformed, std::string("results file: ") + e.what());
  }
  return out;
}

IncDropReport collect_inc_drop(std::span<const ConfidencePair> pairs) {
  if (pairs.empty()) throw Error(ErrorKind::kInvalidArgument, "no confidence pairs");
  double drop = 0.0;
  std::size_t increased = 0;
  for (const auto& p : pairs) {
    if (!(p.original > 0.0) || !std::isfinite(p.original) || !std::isfinite(p.masked)) {
      throw Error(ErrorKind::kInvalidArgument,
                  "sample " + std::to_string(p.sample_id) +
                      ": original confidence Y must be positive and finite");
    }
    drop += std::max(0.0, p.original - p.masked) / p.original;
    if (p.masked > p.original) ++increased;
  }
  const double n = static_cast<double>(pairs.size());
  IncDropReport r;
  r.n = pairs.size();
  r.average_drop = 100.0 * drop / n;
  r.average_increase = 100.0 * static_cast<double>(increased) / n;
  return r;
}

std::string IncDropReport::to_json() const {
  return json{{"n", n}, {"average_increase", average_increase}, {"average_drop", average_drop}}
             .dump(2) +
         "\n";
}

}  // namespace ifa::eval
