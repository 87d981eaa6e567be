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

#include "ifa/refnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ifa/parallel.hpp"

namespace ifa::refnet {

namespace fs = std::filesystem;
using archive::HeadKind;

namespace {

constexpr std::uint32_t kPool1Size = kImageSize / 2;  // 16
constexpr char kDatasetMagic[] = "ISD1";
constexpr char kModelMagic[] = "IRN1";
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

ShapesDataset gen_dataset(std::uint64_t seed, std::size_t n) {
  if (n < 2) throw Error(ErrorKind::kInvalidArgument, "dataset needs n >= 2");
  ShapesDataset data;
  data.seed = seed;
  data.labels.resize(n);
  data.images.assign(n * kPixels, 0.0f);
  Lcg rng(seed);
  const double size = kImageSize;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t label = static_cast<std::int32_t>(i % 2);
    data.labels[i] = label;
    double hx, hy, cx, cy;
    if (label == 0) {
      hx = rng.uniform(4.0, 10.0);
      hy = rng.uniform(4.0, 10.0);
      cx = rng.uniform(hx, size - hx);
      cy = rng.uniform(hy, size - hy);
    } else {
      hx = hy = rng.uniform(4.0, 10.0);
      cx = rng.uniform(hx, size - hx);
      cy = rng.uniform(hy, size - hy);
    }
    const double intensity = rng.uniform(0.6, 1.0);
    float* img = data.images.data() + i * kPixels;
    for (std::uint32_t y = 0; y < kImageSize; ++y) {
      for (std::uint32_t x = 0; x < kImageSize; ++x) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        const bool inside = label == 0 ? (std::abs(dx) <= hx && std::abs(dy) <= hy)
                                       : (dx * dx + dy * dy <= hx * hx);
        double v = (inside ? intensity : 0.0) + rng.uniform(0.0, 0.1);
        img[y * kImageSize + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return data;
}

io::Bytes encode_dataset(const ShapesDataset& dataset) {
  io::BinaryWriter w;
  w.magic(kDatasetMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint64_t>(dataset.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dataset.size()));
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(kImageSize);
  w.put<std::uint32_t>(kImageSize);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    w.put<std::int32_t>(dataset.labels[i]);
    w.put_floats(dataset.image(i));
  }
  return std::move(w).bytes();
}

ShapesDataset decode_dataset(std::span<const std::uint8_t> data, const std::string& context) {
  io::BinaryReader r(data, context);
  if (!r.magic(kDatasetMagic)) throw Error(ErrorKind::kBadMagic, context + ": not a shapes dataset");
  if (r.get<std::uint32_t>() != kFormatVersion) {
    throw Error(ErrorKind::kUnsupportedVersion, context + ": unsupported dataset version");
  }
  ShapesDataset out;
  out.seed = r.get<std::uint64_t>();
  const std::uint32_t n = r.get<std::uint32_t>();
  const std::uint32_t c = r.get<std::uint32_t>();
  const std::uint32_t h = r.get<std::uint32_t>();
  const std::uint32_t w = r.get<std::uint32_t>();
  if (c != 1 || h != kImageSize || w != kImageSize) {
    throw Error(ErrorKind::kShapeMismatch, context + ": dataset images must be 1x32x32");
  }
  out.labels.resize(n);
  out.images.reserve(std::size_t{n} * kPixels);
  for (std::uint32_t i = 0; i < n; ++i) {
    out.labels[i] = r.get<std::int32_t>();
    const auto px = r.get_floats(kPixels);
    out.images.insert(out.images.end(), px.begin(), px.end());
  }
  if (r.remaining() != 0) throw Error(ErrorKind::kCorruptRecord, context + ": trailing bytes");
  return out;
}

void save_dataset(const ShapesDataset& dataset, const fs::path& path) {
  io::write_file_atomic(path, encode_dataset(dataset));
}

ShapesDataset load_dataset(const fs::path& path) {
  return decode_dataset(io::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Model

std::size_t RefNetModel::head_cols() const {
  return head == HeadKind::kGapLinear ? kConv2Filters : kFeatureVolume;
}

archive::HeadSpec RefNetModel::head_spec() const {
  archive::HeadSpec spec;
  spec.kind = head;
  spec.rows = kNumClasses;
  spec.cols = head_cols();
  spec.weights = head_w;
  spec.bias = head_b;
  return spec;
}

RefNetModel init_model(HeadKind head, std::uint64_t seed) {
  if (head == HeadKind::kExternal) {
    throw Error(ErrorKind::kInvalidArgument, "refnet head must be gap_linear or flatten_linear");
  }
  RefNetModel m;
  m.head = head;
  Lcg rng(seed);
  auto fill = [&](std::vector<double>& v, std::size_t count, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    v.resize(count);
    for (double& x : v) x = rng.uniform(-bound, bound);
  };
  fill(m.conv1_w, kConv1Filters * 9, 9);
  m.conv1_b.assign(kConv1Filters, 0.0);
  fill(m.conv2_w, kConv2Filters * kConv1Filters * 9, kConv1Filters * 9);
  m.conv2_b.assign(kConv2Filters, 0.0);
  fill(m.head_w, kNumClasses * m.head_cols(), m.head_cols());
  m.head_b.assign(kNumClasses, 0.0);
  return m;
}

Parameters zeros_like(const RefNetModel& model) {
  Parameters p;
  auto dst = p.tensors();
  auto src = model.tensors();
  for (std::size_t t = 0; t < dst.size(); ++t) dst[t]->assign(src[t]->size(), 0.0);
  return p;
}

namespace {

// 3x3 convolution, zero padding 1, stride 1.
void conv3x3(const double* in, std::uint32_t cin, std::uint32_t size, const double* w,
             const double* b, std::uint32_t cout, double* out) {
  const std::size_t plane = std::size_t{size} * size;
  for (std::uint32_t o = 0; o < cout; ++o) {
    double* dst = out + o * plane;
    std::fill(dst, dst + plane, b[o]);
    for (std::uint32_t i = 0; i < cin; ++i) {
      const double* src = in + i * plane;
      const double* k = w + (std::size_t{o} * cin + i) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double kv = k[ky * 3 + kx];
          for (std::uint32_t y = 0; y < size; ++y) {
            const int sy = static_cast<int>(y) + ky - 1;
            if (sy < 0 || sy >= static_cast<int>(size)) continue;
            const std::uint32_t x0 = kx == 0 ? 1 : 0;
            const std::uint32_t x1 = kx == 2 ? size - 1 : size;
            const double* row = src + sy * size + (kx - 1);
            double* orow = dst + y * size;
            for (std::uint32_t x = x0; x < x1; ++x) orow[x] += kv * row[x];
          }
        }
      }
    }
  }
}

// Gradients of conv3x3 w.r.t. weights, bias and (optionally) input.
void conv3x3_backward(const double* in, std::uint32_t cin, std::uint32_t size, const double* w,
                      std::uint32_t cout, const double* dout, double* dw, double* db,
                      double* din) {
  const std::size_t plane = std::size_t{size} * size;
  for (std::uint32_t o = 0; o < cout; ++o) {
    const double* g = dout + o * plane;
    double bsum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) bsum += g[p];
    db[o] += bsum;
    for (std::uint32_t i = 0; i < cin; ++i) {
      const double* src = in + i * plane;
      const std::size_t kbase = (std::size_t{o} * cin + i) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          double acc = 0.0;
          const double kv = w[kbase + ky * 3 + kx];
          for (std::uint32_t y = 0; y < size; ++y) {
            const int sy = static_cast<int>(y) + ky - 1;
            if (sy < 0 || sy >= static_cast<int>(size)) continue;
            const std::uint32_t x0 = kx == 0 ? 1 : 0;
            const std::uint32_t x1 = kx == 2 ? size - 1 : size;
            const double* row = src + sy * size + (kx - 1);
            const double* grow = g + y * size;
            for (std::uint32_t x = x0; x < x1; ++x) acc += grow[x] * row[x];
            if (din) {
              double* drow = din + i * plane + sy * size + (kx - 1);
              for (std::uint32_t x = x0; x < x1; ++x) drow[x] += grow[x] * kv;
            }
          }
          dw[kbase + ky * 3 + kx] += acc;
        }
      }
    }
  }
}

void relu(std::vector<double>& v) {
  for (double& x : v) x = std::max(0.0, x);
}

void relu_backward(const std::vector<double>& out, std::vector<double>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(out[i] > 0.0)) grad[i] = 0.0;
  }
}

struct Activations {
  std::vector<double> input;
  std::vector<double> relu1;  // 8 x 32 x 32
  PoolResult pool1;  // 8 x 16 x 16
  std::vector<double> relu2;  // 16 x 16 x 16
  PoolResult pool2;  // 16 x 8 x 8, the target features
  std::array<double, kNumClasses> logits{};
};

void check_image(std::span<const float> image) {
  if (image.size() != kPixels) {
    throw Error(ErrorKind::kShapeMismatch, "refnet input must be 1x32x32");
  }
}

Activations run_forward(const RefNetModel& m, std::span<const float> image) {
  check_image(image);
  Activations a;
  a.input.assign(image.begin(), image.end());
  a.relu1.resize(std::size_t{kConv1Filters} * kPixels);
  conv3x3(a.input.data(), 1, kImageSize, m.conv1_w.data(), m.conv1_b.data(), kConv1Filters,
          a.relu1.data());
  relu(a.relu1);
  a.pool1 = max_pool2(a.relu1, kConv1Filters, kImageSize);
  a.relu2.resize(std::size_t{kConv2Filters} * kPool1Size * kPool1Size);
  conv3x3(a.pool1.values.data(), kConv1Filters, kPool1Size, m.conv2_w.data(), m.conv2_b.data(),
          kConv2Filters, a.relu2.data());
  relu(a.relu2);
  a.pool2 = max_pool2(a.relu2, kConv2Filters, kPool1Size);
  a.logits = head_logits(m, a.pool2.values);
  return a;
}

std::array<double, kNumClasses> softmax(const std::array<double, kNumClasses>& z) {
  const double hi = *std::max_element(z.begin(), z.end());
  std::array<double, kNumClasses> p{};
  double total = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) total += p[c] = std::exp(z[c] - hi);
  for (double& v : p) v /= total;
  return p;
}

struct SampleGrad {
  double loss = 0.0;
  bool correct = false;
  Parameters grads;
};

SampleGrad sample_gradient(const RefNetModel& m, std::span<const float> image,
                           std::int32_t label, double scale) {
  const Activations a = run_forward(m, image);
  SampleGrad out;
  out.grads = zeros_like(m);
  out.loss = cross_entropy(a.logits, label);
  out.correct = static_cast<std::int32_t>(std::max_element(a.logits.begin(), a.logits.end()) -
                                          a.logits.begin()) == label;
  auto p = softmax(a.logits);
  p[static_cast<std::size_t>(label)] -= 1.0;
  for (double& v : p) v *= scale;

  Parameters& g = out.grads;
  std::vector<double> dfeat(kFeatureVolume, 0.0);
  constexpr std::size_t s = kFeatureSize * kFeatureSize;
  const std::size_t cols = m.head_cols();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    g.head_b[c] += p[c];
    if (m.head == HeadKind::kGapLinear) {
      for (std::size_t f = 0; f < kConv2Filters; ++f) {
        double mean = 0.0;
        for (std::size_t i = 0; i < s; ++i) mean += a.pool2.values[f * s + i];
        g.head_w[c * cols + f] += p[c] * mean / static_cast<double>(s);
        const double d = p[c] * m.head_w[c * cols + f] / static_cast<double>(s);
        for (std::size_t i = 0; i < s; ++i) dfeat[f * s + i] += d;
      }
    } else {
      for (std::size_t j = 0; j < kFeatureVolume; ++j) {
        g.head_w[c * cols + j] += p[c] * a.pool2.values[j];
        dfeat[j] += p[c] * m.head_w[c * cols + j];
      }
    }
  }

  std::vector<double> drelu2 = max_pool2_backward(a.pool2, dfeat, a.relu2.size());
  relu_backward(a.relu2, drelu2);
  std::vector<double> dpool1(a.pool1.values.size(), 0.0);
  conv3x3_backward(a.pool1.values.data(), kConv1Filters, kPool1Size, m.conv2_w.data(), kConv2Filters,
                   drelu2.data(), g.conv2_w.data(), g.conv2_b.data(), dpool1.data());
  std::vector<double> drelu1 = max_pool2_backward(a.pool1, dpool1, a.relu1.size());
  relu_backward(a.relu1, drelu1);
  conv3x3_backward(a.input.data(), 1, kImageSize, m.conv1_w.data(), kConv1Filters,
                   drelu1.data(), g.conv1_w.data(), g.conv1_b.data(), nullptr);
  return out;
}

void add_into(Parameters& dst, const Parameters& src) {
  auto d = dst.tensors();
  auto s = src.tensors();
  for (std::size_t t = 0; t < d.size(); ++t) {
    for (std::size_t i = 0; i < d[t]->size(); ++i) (*d[t])[i] += (*s[t])[i];
  }
}

struct BatchResult {
  double loss = 0.0;
  std::size_t correct = 0;
};

BatchResult batch_gradients(const RefNetModel& m, std::span<const std::size_t> batch,
                            const ShapesDataset& data, Parameters& grads, unsigned workers) {
  const double scale = 1.0 / static_cast<double>(batch.size());
  BatchResult result;
  const std::vector<std::size_t> items(batch.begin(), batch.end());
  parallel::ordered_map_reduce(
      items, workers,
      [&](std::size_t i) { return sample_gradient(m, data.image(i), data.labels[i], scale); },
      [&](SampleGrad&& sg) {
        result.loss += sg.loss * scale;
        result.correct += sg.correct ? 1 : 0;
        add_into(grads, sg.grads);
      });
  return result;
}

}  // namespace

std::array<double, kNumClasses> head_logits(const RefNetModel& m,
                                            std::span<const double> features) {
  if (features.size() != kFeatureVolume) {
    throw Error(ErrorKind::kShapeMismatch, "refnet features must be 16x8x8");
  }
  std::array<double, kNumClasses> z{};
  constexpr std::size_t s = kFeatureSize * kFeatureSize;
  const std::size_t cols = m.head_cols();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    double acc = m.head_b[c];
    if (m.head == HeadKind::kGapLinear) {
      for (std::size_t f = 0; f < kConv2Filters; ++f) {
        double mean = 0.0;
        for (std::size_t i = 0; i < s; ++i) mean += features[f * s + i];
        acc += m.head_w[c * cols + f] * (mean / static_cast<double>(s));
      }
    } else {
      for (std::size_t j = 0; j < kFeatureVolume; ++j) acc += m.head_w[c * cols + j] * features[j];
    }
    z[c] = acc;
  }
  return z;
}

PoolResult max_pool2(std::span<const double> in, std::uint32_t channels, std::uint32_t size) {
  const std::uint32_t half = size / 2;
  if (in.size() != std::size_t{channels} * size * size) {
    throw Error(ErrorKind::kShapeMismatch, "max_pool2: input does not match its shape");
  }
  PoolResult out;
  out.values.resize(std::size_t{channels} * half * half);
  out.argmax.resize(out.values.size());
  for (std::uint32_t c = 0; c < channels; ++c) {
    for (std::uint32_t y = 0; y < half; ++y) {
      for (std::uint32_t x = 0; x < half; ++x) {
        std::uint32_t best = (c * size + 2 * y) * size + 2 * x;
        for (std::uint32_t dy = 0; dy < 2; ++dy) {
          for (std::uint32_t dx = 0; dx < 2; ++dx) {
            const std::uint32_t idx = (c * size + 2 * y + dy) * size + 2 * x + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (std::size_t{c} * half + y) * half + x;
        out.values[o] = in[best];
        out.argmax[o] = best;
      }
    }
  }
  return out;
}

std::vector<double> max_pool2_backward(const PoolResult& pool, std::span<const double> grad_out,
                                       std::size_t input_size) {
  if (grad_out.size() != pool.argmax.size()) {
    throw Error(ErrorKind::kShapeMismatch, "max_pool2_backward: gradient does not match output");
  }
  std::vector<double> grad(input_size, 0.0);
  for (std::size_t o = 0; o < grad_out.size(); ++o) grad[pool.argmax[o]] += grad_out[o];
  return grad;
}

ForwardResult forward(const RefNetModel& model, std::span<const float> image) {
  Activations a = run_forward(model, image);
  return {std::move(a.pool2.values), a.logits};
}

std::vector<double> grad_target(const RefNetModel& model, std::uint32_t class_id) {
  if (class_id >= kNumClasses) {
    throw Error(ErrorKind::kInvalidArgument, "class " + std::to_string(class_id) + " out of range");
  }
  std::vector<double> g(kFeatureVolume);
  constexpr std::size_t s = kFeatureSize * kFeatureSize;
  const std::size_t cols = model.head_cols();
  for (std::size_t j = 0; j < kFeatureVolume; ++j) {
    g[j] = model.head == HeadKind::kGapLinear
               ? model.head_w[class_id * cols + j / s] / static_cast<double>(s)
               : model.head_w[class_id * cols + j];
  }
  return g;
}

double cross_entropy(const std::array<double, kNumClasses>& logits, std::int32_t label) {
  if (label < 0 || label >= static_cast<std::int32_t>(kNumClasses)) {
    throw Error(ErrorKind::kInvalidArgument, "label out of range");
  }
  const double hi = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - hi);
  return hi + std::log(total) - logits[static_cast<std::size_t>(label)];
}

double loss_and_gradients(const RefNetModel& model, std::span<const std::size_t> batch,
                          const ShapesDataset& data, Parameters& grads, unsigned workers) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "empty batch");
  return batch_gradients(model, batch, data, grads, workers).loss;
}

double default_learning_rate(HeadKind head) {
  return head == HeadKind::kGapLinear ? 0.5 : 0.05;
}

RefNetModel train(const ShapesDataset& data, const TrainOptions& options) {
  if (data.size() == 0) throw Error(ErrorKind::kInvalidArgument, "training set is empty");
  if (options.batch == 0) throw Error(ErrorKind::kInvalidArgument, "batch size must be positive");
  RefNetModel model = init_model(options.head, options.seed);
  const double lr = options.lr.value_or(default_learning_rate(options.head));
  Lcg shuffle_rng(~options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch) {
      const std::size_t end = std::min(order.size(), begin + options.batch);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      Parameters grads = zeros_like(model);
      const BatchResult r = batch_gradients(model, batch, data, grads, options.workers);
      if (!std::isfinite(r.loss)) {
        throw Error(ErrorKind::kDivergence,
                    "training diverged in epoch " + std::to_string(epoch + 1));
      }
      loss_sum += r.loss * static_cast<double>(batch.size());
      correct += r.correct;
      auto params = model.tensors();
      auto deltas = grads.tensors();
      bool finite = true;
      for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t k = 0; k < params[t]->size(); ++k) {
          (*params[t])[k] -= lr * (*deltas[t])[k];
          finite = finite && std::isfinite((*params[t])[k]);
        }
      }
      if (!finite) {
        throw Error(ErrorKind::kDivergence,
                    "training diverged in epoch " + std::to_string(epoch + 1));
      }
    }
    if (options.on_epoch) {
      const double n = static_cast<double>(data.size());
      options.on_epoch(epoch + 1, loss_sum / n, static_cast<double>(correct) / n);
    }
  }
  for (auto* t : model.tensors()) {
    for (double& v : *t) v = static_cast<double>(static_cast<float>(v));
  }
  return model;
}

double accuracy(const RefNetModel& model, const ShapesDataset& data, unsigned workers) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::size_t correct = 0;
  parallel::ordered_map_reduce(
      idx, workers,
      [&](std::size_t i) {
        const auto z = forward(model, data.image(i)).logits;
        return static_cast<std::int32_t>(std::max_element(z.begin(), z.end()) - z.begin()) ==
               data.labels[i];
      },
      [&](bool ok) { correct += ok ? 1 : 0; });
  return data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
}

// ---------------------------------------------------------------------------
// Model file

namespace {

std::vector<std::vector<std::uint32_t>> tensor_shapes(const RefNetModel& m) {
  return {{kConv1Filters, 1, 3, 3},
          {kConv1Filters},
          {kConv2Filters, kConv1Filters, 3, 3},
          {kConv2Filters},
          {kNumClasses, static_cast<std::uint32_t>(m.head_cols())},
          {kNumClasses}};
}

}  // namespace

io::Bytes encode_model(const RefNetModel& model) {
  io::BinaryWriter w;
  w.magic(kModelMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint8_t>(model.head == HeadKind::kGapLinear ? 0 : 1);
  const auto shapes = tensor_shapes(model);
  const auto tensors = model.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(shapes[t].size()));
    for (auto d : shapes[t]) w.put<std::uint32_t>(d);
    std::vector<float> data(tensors[t]->begin(), tensors[t]->end());
    w.put_floats(data);
  }
  return std::move(w).bytes();
}

RefNetModel decode_model(std::span<const std::uint8_t> data, const std::string& context) {
  io::BinaryReader r(data, context);
  if (!r.magic(kModelMagic)) throw Error(ErrorKind::kBadMagic, context + ": not a refnet model");
  if (r.get<std::uint32_t>() != kFormatVersion) {
    throw Error(ErrorKind::kUnsupportedVersion, context + ": unsupported model version");
  }
  RefNetModel m;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw Error(ErrorKind::kMalformed, context + ": unknown head kind");
  m.head = kind == 0 ? HeadKind::kGapLinear : HeadKind::kFlattenLinear;
  const auto shapes = tensor_shapes(m);
  auto tensors = m.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const std::uint32_t rank = r.get<std::uint32_t>();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    if (dims != shapes[t]) {
      throw Error(ErrorKind::kShapeMismatch,
                  context + ": tensor " + kTensorNames[t] + " has unexpected shape");
    }
    const auto values = r.get_floats(archive::volume(dims));
    tensors[t]->assign(values.begin(), values.end());
  }
  if (r.remaining() != 0) throw Error(ErrorKind::kCorruptRecord, context + ": trailing bytes");
  return m;
}

void save_model(const RefNetModel& model, const fs::path& path) {
  io::write_file_atomic(path, encode_model(model));
}

RefNetModel load_model(const fs::path& path) {
  return decode_model(io::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Dump

archive::Manifest dump_archive(const RefNetModel& model, const ShapesDataset& data,
                               const fs::path& out, const DumpOptions& options) {
  archive::Manifest m;
  m.archive_id = options.archive_id.empty()
                     ? "refnet-" + archive::to_string(model.head) + "-" + std::to_string(data.seed)
                     : options.archive_id;
  m.model_id = "refnet";
  m.layer_id = "conv2.pool";
  m.num_features = kConv2Filters;
  m.num_classes = kNumClasses;
  m.class_names = {"rectangle", "disc"};
  m.spatial_rank = 2;
  m.dataset_split = options.split;
  m.head = model.head_spec();

  std::vector<std::vector<float>> grads(kNumClasses);
  for (std::uint32_t c = 0; c < kNumClasses; ++c) {
    const auto g = grad_target(model, c);
    grads[c].assign(g.begin(), g.end());
  }

  archive::ArchiveWriter writer(out, m);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  parallel::ordered_map_reduce(
      idx, options.workers,
      [&](std::size_t i) {
        const ForwardResult fr = forward(model, data.image(i));
        archive::SampleRecord rec;
        rec.sample_id = i;
        rec.true_class = data.labels[i];
        rec.dims = {kFeatureSize, kFeatureSize};
        rec.num_features = kConv2Filters;
        rec.features.assign(fr.features.begin(), fr.features.end());
        const std::vector<double> stored(rec.features.begin(), rec.features.end());
        const auto z = head_logits(model, stored);
        rec.logits.assign(z.begin(), z.end());
        for (std::int32_t c = 0; c < static_cast<std::int32_t>(kNumClasses); ++c) {
          if (options.grads == GradMode::kTrueClass && c != rec.true_class) continue;
          rec.grads[c] = grads[static_cast<std::size_t>(c)];
        }
        const auto img = data.image(i);
        rec.input = archive::InputImage{1, kImageSize, kImageSize, {img.begin(), img.end()}};
        return rec;
      },
      [&](archive::SampleRecord&& rec) { writer.add(rec); }, 64);
  return writer.finish();
}

}  // namespace ifa::refnet
