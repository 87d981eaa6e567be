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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ifa/io.hpp"

namespace ifa::archive {

using Dims = std::vector<std::uint32_t>;

std::size_t volume(const Dims& dims);

enum class DatasetSplit { kTrain, kValidation, kTest, kOther };
std::string to_string(DatasetSplit split);
DatasetSplit parse_split(const std::string& text);

enum class HeadKind { kGapLinear, kFlattenLinear, kExternal };
std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& text);

// Classifier head that follows the target layer. Weights are row-major
// C x F (gap_linear) or C x (F * prod(dims)) (flatten_linear).
struct HeadSpec {
  HeadKind kind = HeadKind::kExternal;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  double weight(std::size_t c, std::size_t j) const {
    return weights[c * cols + j];
  }
  bool replayable() const { return kind != HeadKind::kExternal; }
};

struct Manifest {
  std::string archive_id;
  std::string model_id;
  std::string layer_id;
  std::uint32_t num_features = 0;
  std::uint32_t num_classes = 0;
  std::vector<std::string> class_names;
  std::uint32_t spatial_rank = 2;
  DatasetSplit dataset_split = DatasetSplit::kOther;
  std::optional<HeadSpec> head;
  std::uint64_t sample_count = 0;
  // Opaque per-channel input normalization constants written by extractors.
  std::optional<std::vector<double>> input_mean;
  std::optional<std::vector<double>> input_std;

  // Throws kInvariant when F, C, class names, rank or head shape are off.
  void check() const;
};

struct InputImage {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> pixels;  // channels x height x width
};

// One dumped sample. Tensors are feature-major, then row-major spatial.
struct SampleRecord {
  std::uint64_t sample_id = 0;
  std::int32_t true_class = -1;
  std::vector<float> logits;
  Dims dims;
  std::uint32_t num_features = 0;
  std::vector<float> features;
  std::map<std::int32_t, std::vector<float>> grads;
  std::optional<InputImage> input;

  std::size_t spatial_size() const { return volume(dims); }
  const std::vector<float>& grads_for(std::int32_t class_id) const;
  bool has_grads(std::int32_t class_id) const {
    return grads.contains(class_id);
  }
};

io::Bytes encode_record(const SampleRecord& record);
// Parses a record file. With check_finite, any NaN/Inf is kCorruptRecord.
SampleRecord decode_record(std::span<const std::uint8_t> data,
                           const std::string& context, bool check_finite);

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text);

std::filesystem::path record_path(const std::filesystem::path& root,
                                  std::uint64_t sample_id);

// Single-owner writer. Records may arrive in any order; the manifest is
// written by finish() with the final sample_count.
class ArchiveWriter {
 public:
  ArchiveWriter(std::filesystem::path root, Manifest manifest);

  void add(const SampleRecord& record);
  Manifest finish();

  const Manifest& manifest() const { return manifest_; }

 private:
  void check_record(const SampleRecord& record) const;

  std::filesystem::path root_;
  Manifest manifest_;
  std::vector<std::uint64_t> written_;
  bool finished_ = false;
};

Manifest write_archive(const Manifest& manifest,
                       std::span<const SampleRecord> records,
                       const std::filesystem::path& root);

Manifest read_manifest(const std::filesystem::path& root);

struct SampleSelector {
  std::optional<std::int32_t> true_class;
  std::optional<std::uint64_t> first_id;
  std::optional<std::uint64_t> last_id;  // inclusive

  bool admits_id(std::uint64_t id) const;
};

// Read-only view of an archive. Safe to share between threads.
class ArchiveReader {
 public:
  explicit ArchiveReader(std::filesystem::path root);

  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }
  // All sample ids on disk, ascending.
  const std::vector<std::uint64_t>& sample_ids() const { return ids_; }

  SampleRecord read(std::uint64_t sample_id) const;

  // Ids passing the id-range part of the selector; class filtering needs
  // the record body and happens in for_each / select.
  std::vector<std::uint64_t> ids_in_range(const SampleSelector& selector) const;

 private:
  std::filesystem::path root_;
  Manifest manifest_;
  std::vector<std::uint64_t> ids_;
};

// Streams selected records in ascending sample_id order.
void iter_samples(const ArchiveReader& reader, const SampleSelector& selector,
                  const std::function<void(const SampleRecord&)>& visit);

struct Finding {
  std::optional<std::uint64_t> sample_id;
  std::string check;   // "shape", "finite", "grads", "record", "manifest", ...
  std::string tensor;  // offending tensor name, may be empty
  std::string message;
};

struct ValidationReport {
  std::uint64_t samples_checked = 0;
  std::uint64_t samples_with_grads = 0;
  double grads_coverage = 0.0;  // fraction of samples carrying any grads
  std::vector<Finding> findings;

  bool clean() const { return findings.empty(); }
  std::string to_json() const;
};

ValidationReport validate_archive(const std::filesystem::path& root);

}  // namespace ifa::archive
