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

#include "ifa/schemes.hpp"

#include <algorithm>
#include <cmath>

namespace ifa::schemes {

std::string to_string(SchemeId scheme) {
  switch (scheme) {
    case SchemeId::kGradCam: return "grad-cam";
    case SchemeId::kGradCamPP: return "grad-cam++";
    case SchemeId::kXGradCam: return "xgrad-cam";
    case SchemeId::kPixelwiseGrad: return "pixelwise-grad";
  }
  return "grad-cam";
}

SchemeId parse_scheme(const std::string& name) {
  if (name == "grad-cam") return SchemeId::kGradCam;
  if (name == "grad-cam++") return SchemeId::kGradCamPP;
  if (name == "xgrad-cam") return SchemeId::kXGradCam;
  if (name == "pixelwise-grad") return SchemeId::kPixelwiseGrad;
  throw Error(ErrorKind::kInvalidArgument, "unknown CAM scheme: " + name);
}

namespace {

double grad_cam_weight(std::span<const float> g) {
  double sum = 0.0;
  for (float v : g) sum += v;
  return sum / static_cast<double>(g.size());
}

// Grad CAM++ with the first-derivative-powers approximation:
//   alpha_ij = g_ij^2 / (2 g_ij^2 + (sum_ab A_ab) g_ij^3),  0/0 -> 0
//   w = sum_ij alpha_ij * relu(g_ij)
double grad_cam_pp_weight(std::span<const float> a, std::span<const float> g) {
  double activation_sum = 0.0;
  for (float v : a) activation_sum += v;
  double w = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = g[i];
    const double g2 = gi * gi;
    const double denom = 2.0 * g2 + activation_sum * g2 * gi;
    const double alpha = denom == 0.0 ? 0.0 : g2 / denom;
    w += alpha * std::max(0.0, gi);
  }
  return w;
}

}  // namespace

WeightedFeatureStack weighted_features(SchemeId scheme,
                                       std::span<const float> features,
                                       std::span<const float> grads,
                                       std::size_t num_features,
                                       const archive::Dims& dims) {
  const std::size_t s = archive::volume(dims);
  if (features.size() != num_features * s || grads.size() != features.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                "weighted_features: features/grads shape mismatch");
  }
  WeightedFeatureStack out;
  out.scheme = scheme;
  out.num_features = num_features;
  out.dims = dims;
  out.maps.resize(features.size());
  for (std::size_t f = 0; f < num_features; ++f) {
    const auto a = features.subspan(f * s, s);
    const auto g = grads.subspan(f * s, s);
    double* w_out = out.maps.data() + f * s;
    if (scheme == SchemeId::kPixelwiseGrad) {
      for (std::size_t i = 0; i < s; ++i) {
        w_out[i] = static_cast<double>(g[i]) * static_cast<double>(a[i]);
      }
      continue;
    }
    double w = 0.0;
    switch (scheme) {
      case SchemeId::kGradCam:
        w = grad_cam_weight(g);
        break;
      case SchemeId::kGradCamPP:
        w = grad_cam_pp_weight(a, g);
        break;
      case SchemeId::kXGradCam: {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t i = 0; i < s; ++i) {
          num += static_cast<double>(g[i]) * static_cast<double>(a[i]);
          den += a[i];
        }
        if (std::abs(den) < kXGradEpsilon) {
          out.zero_sum_features.push_back(static_cast<std::uint32_t>(f));
        } else {
          w = num / den;
        }
        break;
      }
      case SchemeId::kPixelwiseGrad:
        break;
    }
    for (std::size_t i = 0; i < s; ++i) w_out[i] = w * static_cast<double>(a[i]);
  }
  return out;
}

WeightedFeatureStack weighted_features(SchemeId scheme,
                                       const archive::SampleRecord& record,
                                       std::int32_t class_id) {
  const auto& g = record.grads_for(class_id);
  WeightedFeatureStack out = weighted_features(
      scheme, record.features, g, record.num_features, record.dims);
  out.sample_id = record.sample_id;
  out.class_id = class_id;
  return out;
}

}  // namespace ifa::schemes
