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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ifa/error.hpp"

namespace ifa::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

using Bytes = std::vector<std::uint8_t>;

// Appends little-endian scalars and f32 payloads to a byte buffer.
class BinaryWriter {
 public:
  void magic(std::string_view tag) {
    buffer_.insert(buffer_.end(), tag.begin(), tag.end());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    buffer_.insert(buffer_.end(), raw, raw + sizeof(T));
  }

  void put_floats(std::span<const float> values) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(values.data());
    buffer_.insert(buffer_.end(), raw, raw + values.size_bytes());
  }

  const Bytes& bytes() const& { return buffer_; }
  Bytes bytes() && { return std::move(buffer_); }

 private:
  Bytes buffer_;
};

// Bounds-checked cursor over a byte buffer. Running past the end throws
// kCorruptRecord with the supplied context string.
class BinaryReader {
 public:
  BinaryReader(std::span<const std::uint8_t> data, std::string context)
      : data_(data), context_(std::move(context)) {}

  bool magic(std::string_view tag) {
    need(tag.size());
    const bool ok =
        std::memcmp(data_.data() + pos_, tag.data(), tag.size()) == 0;
    pos_ += tag.size();
    return ok;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::vector<float> get_floats(std::size_t count) {
    if (count > remaining() / sizeof(float)) fail();
    std::vector<float> values(count);
    std::memcpy(values.data(), data_.data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
    return values;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) fail();
  }
  [[noreturn]] void fail() const {
    throw Error(ErrorKind::kCorruptRecord,
                context_ + ": truncated at byte " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string context_;
};

Bytes read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written file. Missing parent directories are
// created.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> data);
void write_text_atomic(const std::filesystem::path& path,
                       std::string_view text);

void ensure_directory(const std::filesystem::path& path);

// Fixed significant-digit formatting used by CSV outputs.
std::string format_significant(double value, int digits);

}  // namespace ifa::io
