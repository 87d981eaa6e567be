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

#include "ifa/archive.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

namespace ifa::archive {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kRecordMagic[] = "IFR1";
constexpr std::uint32_t kRecordVersion = 1;
constexpr char kManifestFormat[] = "ifa-archive";
constexpr int kManifestVersion = 1;
constexpr std::uint32_t kFlagInput = 1u;

std::string sample_label(std::uint64_t id) {
  return "sample " + std::to_string(id);
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return std::isfinite(v); });
}

template <typename T>
T require_field(const json& doc, const char* key) {
  if (!doc.contains(key)) {
    throw Error(ErrorKind::kMalformed,
                std::string("manifest: missing field '") + key + "'");
  }
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kMalformed,
                std::string("manifest: bad field '") + key + "': " + e.what());
  }
}

}  // namespace

std::size_t volume(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t b) { return a * b; });
}

std::string to_string(DatasetSplit split) {
  switch (split) {
    case DatasetSplit::kTrain: return "train";
    case DatasetSplit::kValidation: return "validation";
    case DatasetSplit::kTest: return "test";
    case DatasetSplit::kOther: return "other";
  }
  return "other";
}

DatasetSplit parse_split(const std::string& text) {
  if (text == "train") return DatasetSplit::kTrain;
  if (text == "validation") return DatasetSplit::kValidation;
  if (text == "test") return DatasetSplit::kTest;
  if (text == "other") return DatasetSplit::kOther;
  throw Error(ErrorKind::kInvalidArgument, "unknown dataset split: " + text);
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::kGapLinear: return "gap_linear";
    case HeadKind::kFlattenLinear: return "flatten_linear";
    case HeadKind::kExternal: return "external";
  }
  return "external";
}

HeadKind parse_head_kind(const std::string& text) {
  if (text == "gap_linear") return HeadKind::kGapLinear;
  if (text == "flatten_linear") return HeadKind::kFlattenLinear;
  if (text == "external") return HeadKind::kExternal;
  throw Error(ErrorKind::kInvalidArgument, "unknown head kind: " + text);
}

void Manifest::check() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorKind::kInvariant, "manifest: " + what);
  };
  if (num_features < 1) fail("num_features must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (class_names.size() != num_classes) {
    fail("class_names has " + std::to_string(class_names.size()) +
         " entries, expected " + std::to_string(num_classes));
  }
  if (spatial_rank != 2 && spatial_rank != 3) fail("spatial_rank must be 2 or 3");
  if (!head) return;
  switch (head->kind) {
    case HeadKind::kExternal:
      if (!head->weights.empty() || !head->bias.empty()) {
        fail("external head must not carry weights");
      }
      return;
    case HeadKind::kGapLinear:
      if (head->rows != num_classes || head->cols != num_features) {
        fail("gap_linear weights must be C x F");
      }
      break;
    case HeadKind::kFlattenLinear:
      if (head->rows != num_classes || head->cols == 0 ||
          head->cols % num_features != 0) {
        fail("flatten_linear weights must be C x (F * spatial size)");
      }
      break;
  }
  if (head->weights.size() != head->rows * head->cols) {
    fail("head weight matrix is ragged");
  }
  if (head->bias.size() != num_classes) fail("head bias must have C entries");
}

const std::vector<float>& SampleRecord::grads_for(std::int32_t class_id) const {
  auto it = grads.find(class_id);
  if (it == grads.end()) {
    throw Error(ErrorKind::kMissingGrads, sample_label(sample_id) +
                                              " has no gradients for class " +
                                              std::to_string(class_id));
  }
  return it->second;
}

io::Bytes encode_record(const SampleRecord& r) {
  io::BinaryWriter w;
  w.magic(kRecordMagic);
  w.put<std::uint32_t>(kRecordVersion);
  w.put<std::uint64_t>(r.sample_id);
  w.put<std::int32_t>(r.true_class);
  w.put<std::uint32_t>(r.input ? kFlagInput : 0u);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.logits.size()));
  w.put_floats(r.logits);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.dims.size()));
  for (auto d : r.dims) w.put<std::uint32_t>(d);
  w.put<std::uint32_t>(r.num_features);
  w.put_floats(r.features);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.grads.size()));
  for (const auto& [cls, g] : r.grads) {
    w.put<std::int32_t>(cls);
    w.put_floats(g);
  }
  if (r.input) {
    w.put<std::uint32_t>(r.input->channels);
    w.put<std::uint32_t>(r.input->height);
    w.put<std::uint32_t>(r.input->width);
    w.put_floats(r.input->pixels);
  }
  return std::move(w).bytes();
}

SampleRecord decode_record(std::span<const std::uint8_t> data,
                           const std::string& context, bool check_finite) {
  io::BinaryReader in(data, context);
  if (!in.magic(kRecordMagic)) {
    throw Error(ErrorKind::kBadMagic, context + ": bad magic");
  }
  if (const auto version = in.get<std::uint32_t>(); version != kRecordVersion) {
    throw Error(ErrorKind::kUnsupportedVersion,
                context + ": record version " + std::to_string(version));
  }
  SampleRecord r;
  r.sample_id = in.get<std::uint64_t>();
  r.true_class = in.get<std::int32_t>();
  const auto flags = in.get<std::uint32_t>();
  r.logits = in.get_floats(in.get<std::uint32_t>());
  const auto rank = in.get<std::uint32_t>();
  if (rank > 8) {
    throw Error(ErrorKind::kCorruptRecord, context + ": implausible rank");
  }
  r.dims.resize(rank);
  for (auto& d : r.dims) d = in.get<std::uint32_t>();
  r.num_features = in.get<std::uint32_t>();
  const std::size_t tensor_size =
      static_cast<std::size_t>(r.num_features) * volume(r.dims);
  r.features = in.get_floats(tensor_size);
  const auto n_grads = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_grads; ++i) {
    const auto cls = in.get<std::int32_t>();
    if (r.grads.contains(cls)) {
      throw Error(ErrorKind::kCorruptRecord,
                  context + ": duplicate gradient class " + std::to_string(cls));
    }
    r.grads.emplace(cls, in.get_floats(tensor_size));
  }
  if (flags & kFlagInput) {
    InputImage img;
    img.channels = in.get<std::uint32_t>();
    img.height = in.get<std::uint32_t>();
    img.width = in.get<std::uint32_t>();
    img.pixels = in.get_floats(static_cast<std::size_t>(img.channels) *
                               img.height * img.width);
    r.input = std::move(img);
  }
  if (in.remaining() != 0) {
    throw Error(ErrorKind::kCorruptRecord, context + ": trailing bytes");
  }
  if (check_finite) {
    bool ok = all_finite(r.logits) && all_finite(r.features);
    for (const auto& [cls, g] : r.grads) ok = ok && all_finite(g);
    if (r.input) ok = ok && all_finite(r.input->pixels);
    if (!ok) {
      throw Error(ErrorKind::kCorruptRecord, context + ": non-finite values");
    }
  }
  return r;
}

std::string manifest_to_json(const Manifest& m) {
  json doc;
  doc["format"] = kManifestFormat;
  doc["format_version"] = kManifestVersion;
  doc["archive_id"] = m.archive_id;
  doc["model_id"] = m.model_id;
  doc["layer_id"] = m.layer_id;
  doc["num_features"] = m.num_features;
  doc["num_classes"] = m.num_classes;
  doc["class_names"] = m.class_names;
  doc["spatial_rank"] = m.spatial_rank;
  doc["dataset_split"] = to_string(m.dataset_split);
  doc["sample_count"] = m.sample_count;
  if (m.head) {
    json head;
    head["kind"] = to_string(m.head->kind);
    json rows = json::array();
    for (std::size_t c = 0; c < m.head->rows; ++c) {
      rows.push_back(std::vector<double>(
          m.head->weights.begin() + static_cast<std::ptrdiff_t>(c * m.head->cols),
          m.head->weights.begin() +
              static_cast<std::ptrdiff_t>((c + 1) * m.head->cols)));
    }
    head["weights"] = std::move(rows);
    head["bias"] = m.head->bias;
    doc["head"] = std::move(head);
  }
  if (m.input_mean || m.input_std) {
    json norm;
    if (m.input_mean) norm["mean"] = *m.input_mean;
    if (m.input_std) norm["std"] = *m.input_std;
    doc["input_normalization"] = std::move(norm);
  }
  return doc.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kMalformed,
                std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw Error(ErrorKind::kMalformed, "manifest must be a JSON object");
  }
  if (!doc.contains("format") || doc["format"] != kManifestFormat) {
    throw Error(ErrorKind::kBadMagic, "manifest: bad magic (format tag)");
  }
  if (const int v = require_field<int>(doc, "format_version");
      v != kManifestVersion) {
    throw Error(ErrorKind::kUnsupportedVersion,
                "manifest: unsupported format_version " + std::to_string(v));
  }
  Manifest m;
  m.archive_id = require_field<std::string>(doc, "archive_id");
  m.model_id = require_field<std::string>(doc, "model_id");
  m.layer_id = require_field<std::string>(doc, "layer_id");
  m.num_features = require_field<std::uint32_t>(doc, "num_features");
  m.num_classes = require_field<std::uint32_t>(doc, "num_classes");
  m.class_names = require_field<std::vector<std::string>>(doc, "class_names");
  m.spatial_rank = require_field<std::uint32_t>(doc, "spatial_rank");
  try {
    m.dataset_split =
        parse_split(require_field<std::string>(doc, "dataset_split"));
  } catch (const Error& e) {
    throw Error(ErrorKind::kMalformed, std::string("manifest: ") + e.what());
  }
  m.sample_count = require_field<std::uint64_t>(doc, "sample_count");
  if (doc.contains("head") && !doc["head"].is_null()) {
    const json& h = doc["head"];
    HeadSpec head;
    try {
      head.kind = parse_head_kind(require_field<std::string>(h, "kind"));
    } catch (const Error& e) {
      throw Error(ErrorKind::kMalformed, std::string("manifest: ") + e.what());
    }
    if (head.kind != HeadKind::kExternal) {
      const auto rows =
          require_field<std::vector<std::vector<double>>>(h, "weights");
      head.rows = rows.size();
      head.cols = rows.empty() ? 0 : rows.front().size();
      for (const auto& row : rows) {
        if (row.size() != head.cols) {
          throw Error(ErrorKind::kInvariant, "manifest: ragged head weights");
        }
        head.weights.insert(head.weights.end(), row.begin(), row.end());
      }
      head.bias = require_field<std::vector<double>>(h, "bias");
    }
    m.head = std::move(head);
  }
  if (doc.contains("input_normalization")) {
    const json& norm = doc["input_normalization"];
    if (norm.contains("mean")) m.input_mean = require_field<std::vector<double>>(norm, "mean");
    if (norm.contains("std")) m.input_std = require_field<std::vector<double>>(norm, "std");
  }
  m.check();
  return m;
}

fs::path record_path(const fs::path& root, std::uint64_t sample_id) {
  char name[40];
  std::snprintf(name, sizeof(name), "%08llu.rec",
                static_cast<unsigned long long>(sample_id));
  return root / "samples" / name;
}

// ---------------------------------------------------------------------------
// Writer

ArchiveWriter::ArchiveWriter(fs::path root, Manifest manifest)
    : root_(std::move(root)), manifest_(std::move(manifest)) {
  manifest_.check();
  io::ensure_directory(root_ / "samples");
  // Re-running a dump into the same directory must not leave stale records.
  for (const auto& entry : fs::directory_iterator(root_ / "samples")) {
    if (entry.path().extension() == ".rec") fs::remove(entry.path());
  }
}

void ArchiveWriter::check_record(const SampleRecord& r) const {
  const std::string who = sample_label(r.sample_id);
  auto mismatch = [&](const std::string& what) {
    throw Error(ErrorKind::kShapeMismatch, who + ": " + what);
  };
  if (r.logits.size() != manifest_.num_classes) mismatch("logits length != C");
  if (r.dims.size() != manifest_.spatial_rank) mismatch("spatial rank differs from manifest");
  if (std::any_of(r.dims.begin(), r.dims.end(), [](auto d) { return d == 0; })) {
    mismatch("zero spatial dimension");
  }
  if (r.num_features != manifest_.num_features) mismatch("feature count != F");
  const std::size_t size = static_cast<std::size_t>(r.num_features) * r.spatial_size();
  if (r.features.size() != size) mismatch("features tensor size");
  for (const auto& [cls, g] : r.grads) {
    if (cls < 0 || static_cast<std::uint32_t>(cls) >= manifest_.num_classes) {
      mismatch("gradient class " + std::to_string(cls) + " out of range");
    }
    if (g.size() != size) {
      mismatch("grads for class " + std::to_string(cls) +
               " do not match the features shape");
    }
  }
  if (r.true_class < -1 ||
      r.true_class >= static_cast<std::int32_t>(manifest_.num_classes)) {
    mismatch("true_class out of range");
  }
  if (r.input) {
    const auto& img = *r.input;
    if (img.pixels.size() !=
        static_cast<std::size_t>(img.channels) * img.height * img.width) {
      mismatch("input tensor size");
    }
  }
  if (manifest_.head && manifest_.head->kind == HeadKind::kFlattenLinear &&
      manifest_.head->cols != size) {
    mismatch("flatten_linear head expects " +
             std::to_string(manifest_.head->cols) + " inputs");
  }
  bool finite = all_finite(r.logits) && all_finite(r.features);
  for (const auto& [cls, g] : r.grads) finite = finite && all_finite(g);
  if (r.input) finite = finite && all_finite(r.input->pixels);
  if (!finite) {
    throw Error(ErrorKind::kInvalidArgument, who + ": non-finite values");
  }
}

void ArchiveWriter::add(const SampleRecord& record) {
  if (finished_) {
    throw Error(ErrorKind::kInvalidArgument, "archive writer already finished");
  }
  check_record(record);
  if (std::find(written_.begin(), written_.end(), record.sample_id) !=
      written_.end()) {
    throw Error(ErrorKind::kDuplicateId,
                sample_label(record.sample_id) + " written twice");
  }
  io::write_file_atomic(record_path(root_, record.sample_id),
                        encode_record(record));
  written_.push_back(record.sample_id);
}

Manifest ArchiveWriter::finish() {
  if (!finished_) {
    manifest_.sample_count = written_.size();
    io::write_text_atomic(root_ / "manifest.json", manifest_to_json(manifest_));
    finished_ = true;
  }
  return manifest_;
}

Manifest write_archive(const Manifest& manifest,
                       std::span<const SampleRecord> records,
                       const fs::path& root) {
  ArchiveWriter writer(root, manifest);
  for (const auto& r : records) writer.add(r);
  return writer.finish();
}

Manifest read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kIo, "no manifest.json in " + root.string());
  }
  return manifest_from_json(io::read_text(path));
}

// ---------------------------------------------------------------------------
// Reader

namespace {

std::optional<std::uint64_t> parse_record_name(const fs::path& p) {
  if (p.extension() != ".rec") return std::nullopt;
  const std::string stem = p.stem().string();
  if (stem.size() < 8 ||
      !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::nullopt;
  }
  try {
    return std::stoull(stem);
  } catch (...) {
    return std::nullopt;
  }
}

std::vector<std::uint64_t> list_sample_ids(const fs::path& root) {
  std::vector<std::uint64_t> ids;
  const fs::path dir = root / "samples";
  if (!fs::is_directory(dir)) return ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (auto id = parse_record_name(entry.path())) ids.push_back(*id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

bool SampleSelector::admits_id(std::uint64_t id) const {
  if (first_id && id < *first_id) return false;
  if (last_id && id > *last_id) return false;
  return true;
}

ArchiveReader::ArchiveReader(fs::path root)
    : root_(std::move(root)),
      manifest_(read_manifest(root_)),
      ids_(list_sample_ids(root_)) {}

SampleRecord ArchiveReader::read(std::uint64_t sample_id) const {
  const std::string who = sample_label(sample_id);
  io::Bytes data;
  try {
    data = io::read_file(record_path(root_, sample_id));
  } catch (const Error& e) {
    throw Error(ErrorKind::kIo, who + ": " + e.what());
  }
  SampleRecord r = decode_record(data, who, /*check_finite=*/true);
  if (r.sample_id != sample_id) {
    throw Error(ErrorKind::kCorruptRecord, who + ": file holds id " +
                                               std::to_string(r.sample_id));
  }
  if (r.num_features != manifest_.num_features ||
      r.logits.size() != manifest_.num_classes ||
      r.dims.size() != manifest_.spatial_rank) {
    throw Error(ErrorKind::kCorruptRecord,
                who + ": record shape disagrees with manifest");
  }
  return r;
}

std::vector<std::uint64_t> ArchiveReader::ids_in_range(
    const SampleSelector& selector) const {
  std::vector<std::uint64_t> out;
  for (auto id : ids_) {
    if (selector.admits_id(id)) out.push_back(id);
  }
  return out;
}

void iter_samples(const ArchiveReader& reader, const SampleSelector& selector,
                  const std::function<void(const SampleRecord&)>& visit) {
  for (auto id : reader.ids_in_range(selector)) {
    SampleRecord r = reader.read(id);
    if (selector.true_class && r.true_class != *selector.true_class) continue;
    visit(r);
  }
}

// ---------------------------------------------------------------------------
// Validation

std::string ValidationReport::to_json() const {
  json doc;
  doc["samples_checked"] = samples_checked;
  doc["samples_with_grads"] = samples_with_grads;
  doc["grads_coverage"] = grads_coverage;
  doc["finding_count"] = findings.size();
  json list = json::array();
  for (const auto& f : findings) {
    json item;
    item["sample_id"] = f.sample_id ? json(*f.sample_id) : json(nullptr);
    item["check"] = f.check;
    item["tensor"] = f.tensor;
    item["message"] = f.message;
    list.push_back(std::move(item));
  }
  doc["findings"] = std::move(list);
  return doc.dump(2) + "\n";
}

ValidationReport validate_archive(const fs::path& root) {
  ValidationReport report;
  Manifest m;
  try {
    m = read_manifest(root);
  } catch (const Error& e) {
    report.findings.push_back({std::nullopt, "manifest", "", e.what()});
    return report;
  }
  const auto ids = list_sample_ids(root);
  if (ids.size() != m.sample_count) {
    report.findings.push_back(
        {std::nullopt, "count", "",
         "manifest sample_count " + std::to_string(m.sample_count) + " but " +
             std::to_string(ids.size()) + " record files"});
  }
  for (auto id : ids) {
    auto add = [&](std::string check, std::string tensor, std::string msg) {
      report.findings.push_back(
          {id, std::move(check), std::move(tensor), std::move(msg)});
    };
    ++report.samples_checked;
    SampleRecord r;
    try {
      const io::Bytes data = io::read_file(record_path(root, id));
      r = decode_record(data, sample_label(id), /*check_finite=*/false);
    } catch (const Error& e) {
      add("record", "", e.what());
      continue;
    }
    if (r.sample_id != id) add("record", "", "sample_id differs from file name");
    if (!all_finite(r.logits)) add("finite", "logits", "non-finite value");
    if (!all_finite(r.features)) add("finite", "features", "non-finite value");
    for (const auto& [cls, g] : r.grads) {
      if (!all_finite(g)) {
        add("finite", "grads[" + std::to_string(cls) + "]", "non-finite value");
      }
      if (cls < 0 || static_cast<std::uint32_t>(cls) >= m.num_classes) {
        add("grads", "grads[" + std::to_string(cls) + "]", "class id out of range");
      }
    }
    if (r.input && !all_finite(r.input->pixels)) {
      add("finite", "input", "non-finite value");
    }
    if (r.logits.size() != m.num_classes) add("shape", "logits", "length != C");
    if (r.num_features != m.num_features) add("shape", "features", "F differs from manifest");
    if (r.dims.size() != m.spatial_rank) add("shape", "features", "spatial rank differs from manifest");
    if (r.true_class < -1 || r.true_class >= static_cast<std::int32_t>(m.num_classes)) {
      add("label", "", "true_class out of range");
    }
    if (m.head && m.head->kind == HeadKind::kFlattenLinear &&
        m.head->cols != r.features.size()) {
      add("shape", "features", "flatten_linear head size mismatch");
    }
    if (!r.grads.empty()) ++report.samples_with_grads;
  }
  report.grads_coverage =
      report.samples_checked == 0
          ? 0.0
          : static_cast<double>(report.samples_with_grads) /
                static_cast<double>(report.samples_checked);
  return report;
}

}  // namespace ifa::archive
