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
#include <span>
#include <string>
#include <vector>

#include "ifa/archive.hpp"

namespace ifa::schemes {

enum class SchemeId { kGradCam, kGradCamPP, kXGradCam, kPixelwiseGrad };

// CLI spelling: grad-cam, grad-cam++, xgrad-cam, pixelwise-grad.
std::string to_string(SchemeId scheme);
SchemeId parse_scheme(const std::string& name);

// Absolute threshold on |sum A^f| below which xgrad_cam assigns w^f = 0.
inline constexpr double kXGradEpsilon = 1e-12;

// W^f = w^f * A^f for every feature, row-major [F x S]. Values keep their
// sign; nothing is rectified here.
struct WeightedFeatureStack {
  std::uint64_t sample_id = 0;
  std::int32_t class_id = 0;
  SchemeId scheme = SchemeId::kGradCam;
  std::size_t num_features = 0;
  archive::Dims dims;
  std::vector<double> maps;
  // xgrad_cam features whose activation sum fell below kXGradEpsilon.
  std::vector<std::uint32_t> zero_sum_features;

  std::size_t spatial_size() const { return archive::volume(dims); }
  std::span<const double> feature(std::size_t f) const {
    return std::span(maps).subspan(f * spatial_size(), spatial_size());
  }
};

WeightedFeatureStack weighted_features(SchemeId scheme,
                                       std::span<const float> features,
                                       std::span<const float> grads,
                                       std::size_t num_features,
                                       const archive::Dims& dims);

// Convenience over a record; throws kMissingGrads if the class is absent.
WeightedFeatureStack weighted_features(SchemeId scheme,
                                       const archive::SampleRecord& record,
                                       std::int32_t class_id);

}  // namespace ifa::schemes
