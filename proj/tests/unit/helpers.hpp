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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "ifa/archive.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ifa-unit-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ifa::archive::Manifest small_manifest(std::uint32_t f, std::uint32_t c) {
  ifa::archive::Manifest m;
  m.archive_id = "unit";
  m.model_id = "synthetic";
  m.layer_id = "layer";
  m.num_features = f;
  m.num_classes = c;
  for (std::uint32_t i = 0; i < c; ++i) m.class_names.push_back("class" + std::to_string(i));
  m.spatial_rank = 2;
  return m;
}

// Random record with ReLU-like features and signed gradients for `grad_classes`.
inline ifa::archive::SampleRecord random_record(std::mt19937_64& rng, std::uint64_t id,
                                                std::int32_t gt, std::uint32_t f,
                                                std::uint32_t c, std::uint32_t h,
                                                std::uint32_t w,
                                                const std::vector<std::int32_t>& grad_classes) {
  std::uniform_real_distribution<float> pos(0.0f, 2.0f);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  ifa::archive::SampleRecord r;
  r.sample_id = id;
  r.true_class = gt;
  r.dims = {h, w};
  r.num_features = f;
  r.features.resize(std::size_t{f} * h * w);
  for (auto& v : r.features) v = pos(rng);
  r.logits.resize(c);
  for (auto& v : r.logits) v = normal(rng);
  for (auto cls : grad_classes) {
    auto& g = r.grads[cls];
    g.resize(r.features.size());
    for (auto& v : g) v = normal(rng);
  }
  return r;
}

}  // namespace testing
