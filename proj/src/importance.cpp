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

#include "ifa/importance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ifa/parallel.hpp"

namespace ifa::importance {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::vector<double> contribution(const schemes::WeightedFeatureStack& stack) {
  std::vector<double> out(stack.num_features, 0.0);
  for (std::size_t f = 0; f < stack.num_features; ++f) {
    double s = 0.0;
    for (double v : stack.feature(f)) s += v;
    out[f] = s;
  }
  return out;
}

std::vector<double> ImportanceMatrix::column(std::size_t c) const {
  std::vector<double> out(num_features);
  for (std::size_t f = 0; f < num_features; ++f) out[f] = at(f, c);
  return out;
}

// ---------------------------------------------------------------------------

ImAccumulator::ImAccumulator(std::size_t num_features, std::size_t num_classes)
    : features_(num_features),
      classes_(num_classes),
      sums_(num_features * num_classes, 0.0),
      sums_sq_(num_features * num_classes, 0.0),
      counts_(num_classes, 0) {}

void ImAccumulator::add(std::size_t c, std::span<const double> contrib) {
  if (contrib.size() != features_ || c >= classes_) {
    throw Error(ErrorKind::kShapeMismatch, "contribution vector does not match IM shape");
  }
  for (std::size_t f = 0; f < features_; ++f) {
    sums_[f * classes_ + c] += contrib[f];
    sums_sq_[f * classes_ + c] += contrib[f] * contrib[f];
  }
  ++counts_[c];
}

void ImAccumulator::merge(const ImAccumulator& other) {
  if (other.features_ != features_ || other.classes_ != classes_) {
    throw Error(ErrorKind::kIncompatible, "IM accumulators differ in shape");
  }
  for (std::size_t i = 0; i < sums_.size(); ++i) {
    sums_[i] += other.sums_[i];
    sums_sq_[i] += other.sums_sq_[i];
  }
  for (std::size_t c = 0; c < classes_; ++c) counts_[c] += other.counts_[c];
}

ImportanceMatrix ImAccumulator::finalize() const {
  ImportanceMatrix im;
  im.num_features = features_;
  im.num_classes = classes_;
  im.counts = counts_;
  im.values.assign(features_ * classes_, kNaN);
  im.stddev.assign(features_ * classes_, kNaN);
  for (std::size_t c = 0; c < classes_; ++c) {
    if (counts_[c] == 0) continue;
    const double n = static_cast<double>(counts_[c]);
    for (std::size_t f = 0; f < features_; ++f) {
      const std::size_t i = f * classes_ + c;
      const double mean = sums_[i] / n;
      im.values[i] = mean;
      im.stddev[i] = std::sqrt(std::max(0.0, sums_sq_[i] / n - mean * mean));
    }
  }
  return im;
}

std::vector<double> ImAccumulator::column_mean(std::size_t c,
                                               std::uint64_t denominator) const {
  std::vector<double> out(features_);
  for (std::size_t f = 0; f < features_; ++f) {
    out[f] = sums_[f * classes_ + c] / static_cast<double>(denominator);
  }
  return out;
}

// ---------------------------------------------------------------------------

ImColumn build_im_per_class(const archive::ArchiveReader& reader,
                            schemes::SchemeId scheme, std::int32_t class_id,
                            const archive::SampleSelector& selector,
                            unsigned workers) {
  const auto& m = reader.manifest();
  if (class_id < 0 || static_cast<std::uint32_t>(class_id) >= m.num_classes) {
    throw Error(ErrorKind::kInvalidArgument,
                "class " + std::to_string(class_id) + " out of range");
  }
  struct Item {
    bool selected = false;
    bool missing = false;
    std::uint64_t id = 0;
    std::vector<double> contrib;
  };
  ImAccumulator acc(m.num_features, 1);
  std::vector<std::uint64_t> missing;
  parallel::ordered_map_reduce(
      reader.ids_in_range(selector), workers,
      [&](std::uint64_t id) {
        const auto r = reader.read(id);
        Item item;
        item.id = id;
        if (selector.true_class && r.true_class != *selector.true_class) return item;
        item.selected = true;
        if (!r.has_grads(class_id)) {
          item.missing = true;
          return item;
        }
        item.contrib = contribution(schemes::weighted_features(scheme, r, class_id));
        return item;
      },
      [&](Item&& item) {
        if (!item.selected) return;
        if (item.missing) {
          missing.push_back(item.id);
          return;
        }
        acc.add(0, item.contrib);
      });
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "samples without gradients for class " << class_id << ":";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg << ' ' << missing[i];
    if (missing.size() > 20) msg << " ... (" << missing.size() << " total)";
    throw Error(ErrorKind::kMissingGrads, msg.str());
  }
  ImColumn col;
  col.class_id = class_id;
  col.samples = acc.count(0);
  if (col.samples == 0) {
    col.values.assign(m.num_features, kNaN);
    col.stddev.assign(m.num_features, kNaN);
    return col;
  }
  const ImportanceMatrix one = acc.finalize();
  col.values = acc.column_mean(0, col.samples);
  col.stddev = one.stddev;
  return col;
}

namespace {

void stamp(ImportanceMatrix& im, const archive::Manifest& m,
           schemes::SchemeId scheme, std::string method) {
  im.class_names = m.class_names;
  im.scheme = scheme;
  im.archive_id = m.archive_id;
  im.split = m.dataset_split;
  im.method = std::move(method);
}

}  // namespace

ImportanceMatrix build_im_per_class_all(const archive::ArchiveReader& reader,
                                        schemes::SchemeId scheme,
                                        unsigned workers) {
  const auto& m = reader.manifest();
  ImportanceMatrix im;
  im.num_features = m.num_features;
  im.num_classes = m.num_classes;
  im.values.assign(im.num_features * im.num_classes, kNaN);
  im.stddev.assign(im.num_features * im.num_classes, kNaN);
  im.counts.assign(im.num_classes, 0);
  for (std::uint32_t c = 0; c < m.num_classes; ++c) {
    const ImColumn col = build_im_per_class(reader, scheme, static_cast<std::int32_t>(c),
                                            {}, workers);
    im.counts[c] = col.samples;
    for (std::size_t f = 0; f < im.num_features; ++f) {
      im.values[f * im.num_classes + c] = col.values[f];
      im.stddev[f * im.num_classes + c] = col.stddev[f];
    }
  }
  stamp(im, m, scheme, "per_class");
  return im;
}

ImportanceMatrix build_im_unified(const archive::ArchiveReader& reader,
                                  schemes::SchemeId scheme, unsigned workers) {
  const auto& m = reader.manifest();
  struct Item {
    std::int32_t cls = -1;
    std::vector<double> contrib;
  };
  ImAccumulator acc(m.num_features, m.num_classes);
  parallel::ordered_map_reduce(
      reader.sample_ids(), workers,
      [&](std::uint64_t id) {
        const auto r = reader.read(id);
        Item item;
        if (r.true_class < 0) return item;
        item.cls = r.true_class;
        item.contrib = contribution(schemes::weighted_features(scheme, r, r.true_class));
        return item;
      },
      [&](Item&& item) {
        if (item.cls >= 0) acc.add(static_cast<std::size_t>(item.cls), item.contrib);
      });
  ImportanceMatrix im = acc.finalize();
  stamp(im, m, scheme, "unified");
  return im;
}

// ---------------------------------------------------------------------------
// Masks

std::string ThresholdRule::describe() const {
  std::ostringstream out;
  switch (kind) {
    case ThresholdKind::kTopPct: out << "top_pct(" << pct << ")"; break;
    case ThresholdKind::kBottomPct: out << "bottom_pct(" << pct << ")"; break;
    case ThresholdKind::kExplicit: {
      out << "explicit(";
      for (std::size_t i = 0; i < features.size(); ++i) out << (i ? "," : "") << features[i];
      out << ")";
      break;
    }
  }
  return out.str();
}

const std::vector<std::uint8_t>& FeatureMask::for_class(std::size_t c) const {
  if (c >= per_class.size()) {
    throw Error(ErrorKind::kInvalidArgument,
                "mask has no entry for class " + std::to_string(c));
  }
  return per_class[c];
}

std::vector<std::uint32_t> FeatureMask::selected(std::size_t c) const {
  std::vector<std::uint32_t> out;
  const auto& m = for_class(c);
  for (std::size_t f = 0; f < m.size(); ++f) {
    if (m[f]) out.push_back(static_cast<std::uint32_t>(f));
  }
  return out;
}

FeatureMask FeatureMask::complement() const {
  FeatureMask out = *this;
  for (auto& row : out.per_class) {
    for (auto& v : row) v = v ? 0 : 1;
  }
  out.source = "complement of " + rule.describe() + " from " + source;
  return out;
}

std::size_t top_count(double pct, std::size_t num_features) {
  // Nudge down before ceil so that e.g. 25% of 16 is exactly 4.
  const double raw = pct / 100.0 * static_cast<double>(num_features);
  const auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(n, num_features);
}

FeatureMask all_ones_mask(std::size_t num_features, std::size_t num_classes) {
  FeatureMask mask;
  mask.num_features = num_features;
  mask.per_class.assign(num_classes, std::vector<std::uint8_t>(num_features, 1));
  mask.rule = {ThresholdKind::kTopPct, 100.0, {}};
  mask.source = "all-ones";
  return mask;
}

FeatureMask threshold_im(const ImportanceMatrix& im, const ThresholdRule& rule) {
  const std::size_t F = im.num_features;
  if (rule.kind != ThresholdKind::kExplicit && !(rule.pct > 0.0 && rule.pct <= 100.0)) {
    throw Error(ErrorKind::kInvalidArgument, "threshold percentage must lie in (0, 100]");
  }
  FeatureMask mask;
  mask.num_features = F;
  mask.rule = rule;
  mask.source = im.archive_id + ":" + im.method + ":" + schemes::to_string(im.scheme);
  mask.per_class.assign(im.num_classes, std::vector<std::uint8_t>(F, 0));
  if (rule.kind == ThresholdKind::kExplicit) {
    for (auto f : rule.features) {
      if (f >= F) {
        throw Error(ErrorKind::kInvalidArgument,
                    "explicit feature index " + std::to_string(f) + " out of range");
      }
      for (auto& row : mask.per_class) row[f] = 1;
    }
    return mask;
  }
  const double top_pct = rule.kind == ThresholdKind::kTopPct ? rule.pct : 100.0 - rule.pct;
  const std::size_t keep = top_pct <= 0.0 ? 0 : top_count(top_pct, F);
  for (std::size_t c = 0; c < im.num_classes; ++c) {
    if (!im.available(c)) continue;
    std::vector<std::uint32_t> order(F);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return im.at(a, c) > im.at(b, c);
    });
    auto& row = mask.per_class[c];
    for (std::size_t i = 0; i < keep; ++i) row[order[i]] = 1;
    if (rule.kind == ThresholdKind::kBottomPct) {
      // bottom_pct(k) is the complement of top_pct(100 - k).
      for (auto& v : row) v = v ? 0 : 1;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Analyses

DriftReport im_drift(const ImportanceMatrix& train, const ImportanceMatrix& test) {
  if (train.num_features != test.num_features || train.num_classes != test.num_classes) {
    throw Error(ErrorKind::kShapeMismatch, "importance matrices differ in shape");
  }
  if (train.scheme != test.scheme) {
    throw Error(ErrorKind::kIncompatible, "importance matrices use different schemes");
  }
  DriftReport report;
  for (std::size_t c = 0; c < train.num_classes; ++c) {
    ClassDrift d;
    d.class_id = c;
    const auto a = train.column(c);
    const auto b = test.column(c);
    d.difference.resize(a.size());
    for (std::size_t f = 0; f < a.size(); ++f) d.difference[f] = b[f] - a[f];
    const double base = l2_norm(a);
    const double diff = l2_norm(d.difference);
    d.normalized_norm = base > 0.0 ? diff / base : (diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    std::vector<std::uint32_t> order(a.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t x, std::uint32_t y) {
      return std::abs(d.difference[x]) > std::abs(d.difference[y]);
    });
    order.resize(std::min<std::size_t>(10, order.size()));
    d.most_drifted = std::move(order);
    report.classes.push_back(std::move(d));
  }
  return report;
}

std::string DriftReport::to_json() const {
  json doc = json::array();
  for (const auto& d : classes) {
    doc.push_back({{"class_id", d.class_id},
                   {"normalized_norm", d.normalized_norm},
                   {"most_drifted", d.most_drifted},
                   {"difference", d.difference}});
  }
  return json{{"classes", doc}}.dump(2) + "\n";
}

double outlier_score(std::span<const double> sample, std::span<const double> column) {
  if (sample.size() != column.size()) {
    throw Error(ErrorKind::kShapeMismatch, "outlier_score: length mismatch");
  }
  const double col_norm = l2_norm(column);
  if (col_norm == 0.0) {
    throw Error(ErrorKind::kDegenerate, "outlier_score: all-zero importance column");
  }
  const double s_norm = l2_norm(sample);
  if (s_norm == 0.0) return 1.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) dot += sample[i] * column[i];
  const double cosine = std::clamp(dot / (s_norm * col_norm), -1.0, 1.0);
  return 1.0 - cosine;
}

RedundancyReport redundancy_report(const ImportanceMatrix& im, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "redundancy eps must lie in (0, 1)");
  }
  RedundancyReport r;
  r.eps = eps;
  double global = 0.0;
  std::vector<double> per_feature(im.num_features, 0.0);
  for (std::size_t f = 0; f < im.num_features; ++f) {
    for (std::size_t c = 0; c < im.num_classes; ++c) {
      if (!im.available(c)) continue;
      per_feature[f] = std::max(per_feature[f], std::abs(im.at(f, c)));
    }
    global = std::max(global, per_feature[f]);
  }
  r.threshold = eps * global;
  for (std::size_t f = 0; f < im.num_features; ++f) {
    if (per_feature[f] < r.threshold) r.rarely_activated.push_back(static_cast<std::uint32_t>(f));
  }
  r.ratio = im.num_features == 0
                ? 0.0
                : static_cast<double>(r.rarely_activated.size()) /
                      static_cast<double>(im.num_features);
  return r;
}

std::string RedundancyReport::to_json() const {
  return json{{"eps", eps},
              {"threshold", threshold},
              {"ratio", ratio},
              {"rarely_activated", rarely_activated}}
             .dump(2) +
         "\n";
}

// ---------------------------------------------------------------------------
// Files

std::string im_to_csv(const ImportanceMatrix& im) {
  std::ostringstream out;
  out << "feature";
  for (std::size_t c = 0; c < im.num_classes; ++c) {
    out << ',' << (c < im.class_names.size() ? im.class_names[c] : "class_" + std::to_string(c));
  }
  out << '\n';
  for (std::size_t f = 0; f < im.num_features; ++f) {
    out << f;
    for (std::size_t c = 0; c < im.num_classes; ++c) {
      out << ',';
      if (im.available(c)) {
        out << io::format_significant(im.at(f, c), 9);
      } else {
        out << "nan";
      }
    }
    out << '\n';
  }
  return out.str();
}

ImportanceMatrix im_from_csv(const std::string& text) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kMalformed, "im.csv: empty");
  auto header = split(line);
  if (header.size() < 2 || header[0] != "feature") {
    throw Error(ErrorKind::kMalformed, "im.csv: bad header");
  }
  ImportanceMatrix im;
  im.num_classes = header.size() - 1;
  im.class_names.assign(header.begin() + 1, header.end());
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) throw Error(ErrorKind::kMalformed, "im.csv: ragged row");
    if (std::stoul(cells[0]) != rows.size()) {
      throw Error(ErrorKind::kMalformed, "im.csv: feature rows out of order");
    }
    std::vector<double> row;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      row.push_back(cells[i] == "nan" ? kNaN : std::stod(cells[i]));
    }
    rows.push_back(std::move(row));
  }
  im.num_features = rows.size();
  im.values.reserve(im.num_features * im.num_classes);
  for (const auto& row : rows) im.values.insert(im.values.end(), row.begin(), row.end());
  im.stddev.assign(im.values.size(), kNaN);
  im.counts.assign(im.num_classes, 0);
  for (std::size_t c = 0; c < im.num_classes; ++c) {
    // Without a sidecar, a column is available iff it holds numbers.
    im.counts[c] = im.num_features > 0 && !std::isnan(im.at(0, c)) ? 1 : 0;
  }
  return im;
}

std::string im_meta_to_json(const ImportanceMatrix& im) {
  json doc;
  doc["format"] = "ifa-im-meta";
  doc["archive_id"] = im.archive_id;
  doc["scheme"] = schemes::to_string(im.scheme);
  doc["split"] = archive::to_string(im.split);
  doc["method"] = im.method;
  doc["counts"] = im.counts;
  json available = json::array();
  for (std::size_t c = 0; c < im.num_classes; ++c) available.push_back(im.available(c));
  doc["available"] = std::move(available);
  json sd = json::array();
  for (std::size_t f = 0; f < im.num_features; ++f) {
    json row = json::array();
    for (std::size_t c = 0; c < im.num_classes; ++c) {
      const double v = im.stddev[f * im.num_classes + c];
      row.push_back(std::isnan(v) ? json(nullptr) : json(v));
    }
    sd.push_back(std::move(row));
  }
  doc["stddev"] = std::move(sd);
  return doc.dump(2) + "\n";
}

void apply_im_meta(ImportanceMatrix& im, const std::string& text) {
  try {
    const json doc = json::parse(text);
    im.archive_id = doc.at("archive_id").get<std::string>();
    im.scheme = schemes::parse_scheme(doc.at("scheme").get<std::string>());
    im.split = archive::parse_split(doc.at("split").get<std::string>());
    im.method = doc.at("method").get<std::string>();
    const auto counts = doc.at("counts").get<std::vector<std::uint64_t>>();
    if (counts.size() != im.num_classes) {
      throw Error(ErrorKind::kShapeMismatch, "im meta: class count differs from im.csv");
    }
    im.counts = counts;
    const auto& sd = doc.at("stddev");
    for (std::size_t f = 0; f < im.num_features && f < sd.size(); ++f) {
      for (std::size_t c = 0; c < im.num_classes && c < sd[f].size(); ++c) {
        im.stddev[f * im.num_classes + c] = sd[f][c].is_null() ? kNaN : sd[f][c].get<double>();
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kMalformed, std::string("im meta: ") + e.what());
  }
}

std::string mask_to_json(const FeatureMask& mask) {
  json doc;
  doc["format"] = "ifa-mask";
  doc["num_features"] = mask.num_features;
  json rule;
  switch (mask.rule.kind) {
    case ThresholdKind::kTopPct: rule = {{"kind", "top_pct"}, {"pct", mask.rule.pct}}; break;
    case ThresholdKind::kBottomPct: rule = {{"kind", "bottom_pct"}, {"pct", mask.rule.pct}}; break;
    case ThresholdKind::kExplicit: rule = {{"kind", "explicit"}, {"features", mask.rule.features}}; break;
  }
  doc["provenance"] = {{"rule", rule}, {"source", mask.source}};
  json classes = json::array();
  for (std::size_t c = 0; c < mask.per_class.size(); ++c) {
    classes.push_back({{"class_id", c}, {"features", mask.selected(c)}});
  }
  doc["classes"] = std::move(classes);
  return doc.dump(2) + "\n";
}

FeatureMask mask_from_json(const std::string& text) {
  FeatureMask mask;
  try {
    const json doc = json::parse(text);
    if (doc.value("format", "") != "ifa-mask") {
      throw Error(ErrorKind::kBadMagic, "not an ifa mask document");
    }
    mask.num_features = doc.at("num_features").get<std::size_t>();
    const auto& rule = doc.at("provenance").at("rule");
    const std::string kind = rule.at("kind").get<std::string>();
    if (kind == "top_pct") {
      mask.rule = {ThresholdKind::kTopPct, rule.at("pct").get<double>(), {}};
    } else if (kind == "bottom_pct") {
      mask.rule = {ThresholdKind::kBottomPct, rule.at("pct").get<double>(), {}};
    } else if (kind == "explicit") {
      mask.rule = {ThresholdKind::kExplicit, 0.0,
                   rule.at("features").get<std::vector<std::uint32_t>>()};
    } else {
      throw Error(ErrorKind::kMalformed, "mask: unknown rule " + kind);
    }
    mask.source = doc.at("provenance").value("source", "");
    for (const auto& entry : doc.at("classes")) {
      std::vector<std::uint8_t> row(mask.num_features, 0);
      for (auto f : entry.at("features").get<std::vector<std::uint32_t>>()) {
        if (f >= mask.num_features) throw Error(ErrorKind::kMalformed, "mask: index out of range");
        row[f] = 1;
      }
      mask.per_class.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kMalformed, std::string("mask document: ") + e.what());
  }
  return mask;
}

}  // namespace ifa::importance
