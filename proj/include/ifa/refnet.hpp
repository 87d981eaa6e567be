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

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ifa/archive.hpp"

namespace ifa::refnet {

inline constexpr std::uint32_t kImageSize = 32;
inline constexpr std::uint32_t kConv1Filters = 8;
inline constexpr std::uint32_t kConv2Filters = 16;
inline constexpr std::uint32_t kFeatureSize = 8;
inline constexpr std::uint32_t kNumClasses = 2;
inline constexpr std::size_t kPixels = kImageSize * kImageSize;
inline constexpr std::size_t kFeatureVolume =
    std::size_t{kConv2Filters} * kFeatureSize * kFeatureSize;

// 64-bit LCG (Knuth MMIX constants). uniform() uses the top 53 bits.
class Lcg {
 public:
  explicit Lcg(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
    return state_;
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

 private:
  std::uint64_t state_;
};

// Two-class synthetic shapes: 0 = filled axis-aligned rectangle, 1 = filled
// disc. Images are 1 x 32 x 32 in [0, 1], stored back to back.
struct ShapesDataset {
  std::uint64_t seed = 0;
  std::vector<std::int32_t> labels;
  std::vector<float> images;

  std::size_t size() const { return labels.size(); }
  std::span<const float> image(std::size_t i) const {
    return {images.data() + i * kPixels, kPixels};
  }
};

ShapesDataset gen_dataset(std::uint64_t seed, std::size_t n);

io::Bytes encode_dataset(const ShapesDataset& dataset);
ShapesDataset decode_dataset(std::span<const std::uint8_t> data, const std::string& context);
void save_dataset(const ShapesDataset& dataset, const std::filesystem::path& path);
ShapesDataset load_dataset(const std::filesystem::path& path);

// Parameter tensors in file order. Shapes:
//   conv1_w 8x1x3x3, conv1_b 8, conv2_w 16x8x3x3, conv2_b 16,
//   head_w 2x16 (gap_linear) or 2x1024 (flatten_linear), head_b 2.
struct Parameters {
  std::vector<double> conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b;

  std::array<std::vector<double>*, 6> tensors() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &head_w, &head_b};
  }
  std::array<const std::vector<double>*, 6> tensors() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &head_w, &head_b};
  }
};

inline constexpr std::array<const char*, 6> kTensorNames = {
    "conv1.w", "conv1.b", "conv2.w", "conv2.b", "head.w", "head.b"};

struct RefNetModel : Parameters {
  archive::HeadKind head = archive::HeadKind::kGapLinear;

  std::size_t head_cols() const;
  archive::HeadSpec head_spec() const;
};

// Uniform in +-sqrt(1 / fan_in), zero biases.
RefNetModel init_model(archive::HeadKind head, std::uint64_t seed);
// Same shapes as `model`, all zeros.
Parameters zeros_like(const RefNetModel& model);

// 2x2 stride-2 max pool over `channels` planes of size x size. argmax holds
// the winning flat input index; ties go to the first position in row-major
// order.
struct PoolResult {
  std::vector<double> values;
  std::vector<std::uint32_t> argmax;
};

PoolResult max_pool2(std::span<const double> input, std::uint32_t channels, std::uint32_t size);
// Routes each output gradient to its argmax input.
std::vector<double> max_pool2_backward(const PoolResult& pool, std::span<const double> grad_out,
                                       std::size_t input_size);

struct ForwardResult {
  std::vector<double> features;  // 16 x 8 x 8
  std::array<double, kNumClasses> logits{};
};

ForwardResult forward(const RefNetModel& model, std::span<const float> image);

// Head applied to target-layer activations.
std::array<double, kNumClasses> head_logits(const RefNetModel& model,
                                            std::span<const double> features);

// d logit_c / d features, 16 x 8 x 8.
std::vector<double> grad_target(const RefNetModel& model, std::uint32_t class_id);

// Mean cross-entropy over the batch; accumulates d loss / d params into
// `grads` (which must be shaped like the model).
double loss_and_gradients(const RefNetModel& model, std::span<const std::size_t> batch,
                          const ShapesDataset& data, Parameters& grads,
                          unsigned workers = 1);

double cross_entropy(const std::array<double, kNumClasses>& logits, std::int32_t label);

struct TrainOptions {
  archive::HeadKind head = archive::HeadKind::kGapLinear;
  std::size_t epochs = 10;
  // Unset: 0.5 for gap_linear, 0.05 for flatten_linear.
  std::optional<double> lr;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::function<void(std::size_t epoch, double loss, double accuracy)> on_epoch;
};

// Minibatch SGD with a seeded shuffle each epoch. Parameters are rounded to
// f32 at the end so the model file reproduces the trained network exactly.
RefNetModel train(const ShapesDataset& data, const TrainOptions& options);

double default_learning_rate(archive::HeadKind head);

double accuracy(const RefNetModel& model, const ShapesDataset& data, unsigned workers = 1);

io::Bytes encode_model(const RefNetModel& model);
RefNetModel decode_model(std::span<const std::uint8_t> data, const std::string& context);
void save_model(const RefNetModel& model, const std::filesystem::path& path);
RefNetModel load_model(const std::filesystem::path& path);

enum class GradMode { kAllClasses, kTrueClass };

struct DumpOptions {
  GradMode grads = GradMode::kAllClasses;
  archive::DatasetSplit split = archive::DatasetSplit::kTest;
  std::string archive_id;  // defaults to refnet-<head>-<seed>
  unsigned workers = 1;
};

archive::Manifest dump_archive(const RefNetModel& model, const ShapesDataset& data,
                               const std::filesystem::path& out, const DumpOptions& options);

}  // namespace ifa::refnet
