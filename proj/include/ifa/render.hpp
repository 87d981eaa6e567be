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
#include <span>
#include <string>
#include <vector>

#include "ifa/archive.hpp"
#include "ifa/campipe.hpp"

namespace ifa::render {

// diverging: -1 blue, 0 white, +1 red.  sequential: 0 black, 1 red.
enum class ColorMap { kDiverging, kSequential };
std::string to_string(ColorMap map);

// Unquantized channel values in [0, 255]; input clamped to the domain.
std::array<double, 3> colorize(ColorMap map, double value);

// floor(x + 0.5), clamped to [0, 255].
std::uint8_t quantize(double channel);

struct RgbImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  std::array<std::uint8_t, 3> at(std::uint32_t x, std::uint32_t y) const {
    const std::size_t i = (std::size_t{y} * width + x) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};

// common -> diverging; individual -> sequential; raw -> diverging over
// [-max|x|, max|x|].
ColorMap default_colormap(campipe::ScaleMode mode);

RgbImage cam_image(const campipe::CamResult& cam, ColorMap map);
RgbImage cam_image(const campipe::CamResult& cam);

// Grayscale from a 1- or 3-channel input in [0, 1].
std::vector<double> grayscale(const archive::InputImage& input);

// out = alpha * colormap(cam) + (1 - alpha) * 255 * gray(input); the CAM is
// resized to the input size first.
RgbImage overlay_image(const campipe::CamResult& cam, const archive::InputImage& input,
                       double alpha, ColorMap map);
RgbImage overlay_image(const campipe::CamResult& cam, const archive::InputImage& input,
                       double alpha);

// 8-bit RGB PNG without ancillary chunks.
io::Bytes encode_png(const RgbImage& image);
RgbImage decode_png(std::span<const std::uint8_t> data);

io::Bytes render_cam(const campipe::CamResult& cam);
io::Bytes overlay(const campipe::CamResult& cam, const archive::InputImage& input, double alpha);

// <sample_id>_<class>_<scheme>_<mode>.png
std::string png_name(const campipe::CamResult& cam);

}  // namespace ifa::render
