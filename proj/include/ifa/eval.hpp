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
#include <span>
#include <string>
#include <vector>

#include "ifa/archive.hpp"
#include "ifa/campipe.hpp"
#include "ifa/importance.hpp"

namespace ifa::eval {

// --- Consistency between CAM sums and logits ------------------------------

struct NormalityTest {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Jarque-Bera: n * (S^2 / 6 + (K - 3)^2 / 24), p from chi-squared(2).
NormalityTest jarque_bera(std::span<const double> x);

// Both throw kDegenerate when either series is constant.
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
// 1-based ranks, ties share their average rank.
std::vector<double> average_ranks(std::span<const double> x);

enum class Coefficient { kPearson, kSpearman };
std::string to_string(Coefficient c);

struct ConsistencyReport {
  std::size_t n = 0;
  double pearson = 0.0;
  double spearman = 0.0;
  NormalityTest normality_cam;
  NormalityTest normality_logit;
  Coefficient selected = Coefficient::kSpearman;

  // Filled by callers that know where the series came from.
  std::int32_t class_id = 0;
  std::string scheme;
  std::string scale_mode;
  std::vector<std::uint64_t> sample_ids;
  std::vector<double> cam_sums;
  std::vector<double> logits;

  double selected_value() const {
    return selected == Coefficient::kPearson ? pearson : spearman;
  }
  std::string to_json() const;
  // sample_id,cam_sum,logit
  std::string to_csv() const;
};

inline constexpr char kSelectionRule[] =
    "pearson iff both Jarque-Bera p-values > 0.05, else spearman";

ConsistencyReport consistency(std::span<const double> cam_sums,
                              std::span<const double> logits);

// --- Head replay with blocked feature paths --------------------------------

std::vector<double> replay_logits(const archive::HeadSpec& head,
                                  std::span<const float> features,
                                  std::size_t num_features,
                                  std::span<const std::uint8_t> mask);

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);
std::size_t argmax(std::span<const float> values);

struct MaskedAccuracyReport {
  double accuracy_all = 0.0;
  double accuracy_principal = 0.0;
  double accuracy_nonprincipal = 0.0;
  std::size_t n = 0;
  std::string mask_provenance;
  std::vector<std::uint64_t> sample_ids;
  std::vector<std::int32_t> true_classes;
  std::vector<std::uint32_t> predicted_all;
  std::vector<std::uint32_t> predicted_principal;
  std::vector<std::uint32_t> predicted_nonprincipal;

  std::string to_json() const;
};

// Class c's logit is replayed with class c's mask row; the non-principal
// condition uses the complement of each row. Unlabelled samples are skipped.
MaskedAccuracyReport masked_accuracy(const archive::ArchiveReader& reader,
                                     const importance::FeatureMask& mask,
                                     unsigned workers = 1);

// --- Average increase / drop via masked-input jobs -------------------------

// ReLU, then min-max to [0, 1]. A constant positive map is all ones, a
// constant non-positive map all zeros. Values below `threshold` become 0.
void normalize_mask(std::span<double> map, double threshold = 0.0);

struct MaskJob {
  std::uint64_t sample_id = 0;
  std::int32_t class_id = 0;
  std::string mask_file;
};

struct JobManifest {
  std::string archive_id;
  std::string cam_name;
  double threshold = 0.0;
  std::vector<MaskJob> jobs;

  std::string to_json() const;
};

JobManifest job_manifest_from_json(const std::string& text);

// Writes <out>/<id>.maskf32 for each CAM (resized to the sample's input
// size) and <out>/manifest.json.
class MaskJobEmitter {
 public:
  MaskJobEmitter(std::filesystem::path out_dir, const archive::ArchiveReader& reader,
                 double threshold = 0.0);
  void add(const campipe::CamResult& cam);
  JobManifest finish(const std::string& cam_name);

 private:
  std::filesystem::path out_;
  const archive::ArchiveReader& reader_;
  double threshold_;
  JobManifest manifest_;
};

JobManifest emit_mask_jobs(std::span<const campipe::CamResult> cams,
                           const archive::ArchiveReader& reader,
                           const std::filesystem::path& out_dir,
                           double threshold = 0.0);

struct ConfidencePair {
  std::uint64_t sample_id = 0;
  double original = 0.0;  // Y
  double masked = 0.0;    // O
};

std::vector<ConfidencePair> results_from_json(const std::string& text);

struct IncDropReport {
  double average_increase = 0.0;
  double average_drop = 0.0;
  std::size_t n = 0;

  std::string to_json() const;
};

// drop = 100/n * sum max(0, Y - O) / Y;  increase = 100/n * #(O > Y).
IncDropReport collect_inc_drop(std::span<const ConfidencePair> pairs);

}  // namespace ifa::eval
