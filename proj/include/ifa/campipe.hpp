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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ifa/archive.hpp"
#include "ifa/distribution.hpp"
#include "ifa/importance.hpp"
#include "ifa/schemes.hpp"

namespace ifa::campipe {

// tanh(alpha * x + beta) anchored so that P10 -> 0.1 and P90 -> 0.9.
struct SigmaParams {
  double p10 = 0.0;
  double p90 = 1.0;
  double alpha = 0.0;
  double beta = 0.0;

  double operator()(double x) const;
};

SigmaParams sigma_from_percentiles(double p10, double p90);
void apply_sigma(std::span<double> map, const SigmaParams& params);

// Row-major map with its spatial dims.
struct Map {
  archive::Dims dims;
  std::vector<double> values;

  double sum() const;
};

// sum_f m_f * W^f, with m all-ones when no mask is given.
Map compose_raw(const schemes::WeightedFeatureStack& stack,
                const std::vector<std::uint8_t>* mask = nullptr);

// Bilinear, half-pixel centres, edge clamp. 2D only.
Map resize_spatial(const Map& map, std::uint32_t height, std::uint32_t width);

// ReLU then per-map min-max; constant maps become all zeros.
void scale_individual(std::span<double> map);

enum class ScaleMode : std::uint8_t { kRaw = 0, kIndividual = 1, kCommon = 2 };
std::string to_string(ScaleMode mode);
ScaleMode parse_scale_mode(const std::string& text);

inline constexpr char kResampling[] = "bilinear-half-pixel";

struct CamResult {
  std::uint64_t sample_id = 0;
  std::int32_t class_id = 0;
  schemes::SchemeId scheme = schemes::SchemeId::kGradCam;
  ScaleMode scale_mode = ScaleMode::kRaw;
  std::optional<std::string> mask_provenance;
  Map map;
  double sum = 0.0;

  // e.g. "grad-cam", "S-grad-cam", "FS-S-grad-cam".
  std::string name() const;
};

struct GenerateOptions {
  std::int32_t class_id = distribution::kPerTrueClass;
  ScaleMode scale_mode = ScaleMode::kCommon;
  const distribution::StatsFile* stats = nullptr;
  const importance::FeatureMask* mask = nullptr;
  // Output size; defaults to the input image size when the sample has one,
  // else the feature map size.
  std::optional<std::pair<std::uint32_t, std::uint32_t>> target;
  unsigned workers = 1;
};

// One sample through mask -> feature sum -> resize -> scale.
CamResult generate_one(const archive::SampleRecord& record,
                       schemes::SchemeId scheme, std::int32_t class_id,
                       ScaleMode mode, const SigmaParams* sigma,
                       const importance::FeatureMask* mask,
                       std::optional<std::pair<std::uint32_t, std::uint32_t>> target);

// Streams CAMs in ascending sample_id order. Samples without a usable class
// (unlabelled in per-true-class mode) are skipped.
void generate(const archive::ArchiveReader& reader, schemes::SchemeId scheme,
              const GenerateOptions& options,
              const std::function<void(CamResult&&)>& sink);

// .camf32 / .maskf32 layout: "ICM1", sample_id u64, class i32, scale_mode u8,
// dims u32 x 2, f32 payload.
io::Bytes encode_cam(const CamResult& cam);
CamResult decode_cam(std::span<const std::uint8_t> data,
                     const std::string& context);

// Writes cams/<id>.camf32 plus index.json, one call per completed run.
class CamWriter {
 public:
  explicit CamWriter(std::filesystem::path dir);
  void add(const CamResult& cam);
  void finish(const std::string& archive_id);

 private:
  std::filesystem::path dir_;
  std::vector<CamResult> index_;  // metadata only; maps are cleared
};

struct CamIndexEntry {
  std::uint64_t sample_id = 0;
  std::int32_t class_id = 0;
  double sum = 0.0;
  std::filesystem::path file;
};

struct CamIndex {
  std::string archive_id;
  std::string name;
  schemes::SchemeId scheme = schemes::SchemeId::kGradCam;
  ScaleMode scale_mode = ScaleMode::kRaw;
  std::vector<CamIndexEntry> entries;
};

CamIndex read_cam_index(const std::filesystem::path& dir);
CamResult read_cam(const std::filesystem::path& file);

}  // namespace ifa::campipe
