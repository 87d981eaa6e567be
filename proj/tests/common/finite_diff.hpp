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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ifa/refnet.hpp"

namespace testing {

// Parameter step for central differences. Larger steps straddle ReLU and
// max-pool switch points on a fair share of parameters.
inline constexpr double kFdStep = 1e-6;

// Mean cross-entropy over a batch, straight from forward().
inline double batch_loss(const ifa::refnet::RefNetModel& model,
                         std::span<const std::size_t> batch,
                         const ifa::refnet::ShapesDataset& data) {
  double total = 0.0;
  for (std::size_t i : batch) {
    total += ifa::refnet::cross_entropy(ifa::refnet::forward(model, data.image(i)).logits,
                                        data.labels[i]);
  }
  return total / static_cast<double>(batch.size());
}

// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
// to rounding from dominating the ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct FdResult {
  std::size_t checked = 0;
  double worst = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

// Central differences with step h on every `stride`-th entry of each tensor.
inline FdResult check_parameter_gradients(const ifa::refnet::RefNetModel& model,
                                          std::span<const std::size_t> batch,
                                          const ifa::refnet::ShapesDataset& data,
                                          double h = kFdStep, std::size_t stride = 1) {
  auto grads = ifa::refnet::zeros_like(model);
  ifa::refnet::loss_and_gradients(model, batch, data, grads);
  FdResult out;
  ifa::refnet::RefNetModel probe = model;
  auto probe_tensors = probe.tensors();
  const auto grad_tensors = grads.tensors();
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    auto& values = *probe_tensors[t];
    for (std::size_t k = 0; k < values.size(); k += stride) {
      const double saved = values[k];
      values[k] = saved + h;
      const double up = batch_loss(probe, batch, data);
      values[k] = saved - h;
      const double down = batch_loss(probe, batch, data);
      values[k] = saved;
      const double err = relative_error((*grad_tensors[t])[k], (up - down) / (2 * h));
      ++out.checked;
      if (err > out.worst) {
        out.worst = err;
        out.worst_tensor = t;
        out.worst_index = k;
      }
    }
  }
  return out;
}

// d logit_c / d features against central differences through the head.
inline double check_target_gradient(const ifa::refnet::RefNetModel& model,
                                    std::span<const double> features, std::uint32_t c,
                                    double h = 1e-3) {
  const auto analytic = ifa::refnet::grad_target(model, c);
  std::vector<double> probe(features.begin(), features.end());
  double worst = 0.0;
  for (std::size_t j = 0; j < probe.size(); ++j) {
    const double saved = probe[j];
    probe[j] = saved + h;
    const double up = ifa::refnet::head_logits(model, probe)[c];
    probe[j] = saved - h;
    const double down = ifa::refnet::head_logits(model, probe)[c];
    probe[j] = saved;
    worst = std::max(worst, relative_error(analytic[j], (up - down) / (2 * h)));
  }
  return worst;
}

}  // namespace testing
