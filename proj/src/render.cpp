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

#include "ifa/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <png.h>

namespace ifa::render {

std::string to_string(ColorMap map) {
  return map == ColorMap::kDiverging ? "diverging" : "sequential";
}

std::array<double, 3> colorize(ColorMap map, double value) {
  if (std::isnan(value)) value = 0.0;
  if (map == ColorMap::kSequential) {
    const double v = std::clamp(value, 0.0, 1.0);
    return {255.0 * v, 0.0, 0.0};
  }
  const double v = std::clamp(value, -1.0, 1.0);
  if (v < 0.0) {
    const double t = v + 1.0;  // 0 at blue, 1 at white
    return {255.0 * t, 255.0 * t, 255.0};
  }
  const double t = 1.0 - v;  // 1 at white, 0 at red
  return {255.0, 255.0 * t, 255.0 * t};
}

std::uint8_t quantize(double channel) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(channel + 0.5), 0.0, 255.0));
}

ColorMap default_colormap(campipe::ScaleMode mode) {
  return mode == campipe::ScaleMode::kIndividual ? ColorMap::kSequential : ColorMap::kDiverging;
}

namespace {

void require_2d(const campipe::Map& map) {
  if (map.dims.size() != 2) {
    throw Error(ErrorKind::kUnsupported, "rendering needs a 2D map, got rank " +
                                             std::to_string(map.dims.size()));
  }
}

// Raw maps have no fixed domain; they are shown over [-max|x|, max|x|].
double value_scale(const campipe::CamResult& cam) {
  if (cam.scale_mode != campipe::ScaleMode::kRaw) return 1.0;
  double peak = 0.0;
  for (double v : cam.map.values) peak = std::max(peak, std::abs(v));
  return peak > 0.0 ? 1.0 / peak : 1.0;
}

}  // namespace

RgbImage cam_image(const campipe::CamResult& cam, ColorMap map) {
  require_2d(cam.map);
  RgbImage img;
  img.height = cam.map.dims[0];
  img.width = cam.map.dims[1];
  img.pixels.resize(cam.map.values.size() * 3);
  const double scale = value_scale(cam);
  for (std::size_t i = 0; i < cam.map.values.size(); ++i) {
    const auto rgb = colorize(map, cam.map.values[i] * scale);
    for (int k = 0; k < 3; ++k) img.pixels[i * 3 + k] = quantize(rgb[k]);
  }
  return img;
}

RgbImage cam_image(const campipe::CamResult& cam) {
  return cam_image(cam, default_colormap(cam.scale_mode));
}

std::vector<double> grayscale(const archive::InputImage& input) {
  const std::size_t plane = std::size_t{input.height} * input.width;
  std::vector<double> gray(plane);
  if (input.channels == 1) {
    for (std::size_t i = 0; i < plane; ++i) gray[i] = input.pixels[i];
  } else if (input.channels == 3) {
    for (std::size_t i = 0; i < plane; ++i) {
      gray[i] = 0.299 * input.pixels[i] + 0.587 * input.pixels[plane + i] +
                0.114 * input.pixels[2 * plane + i];
    }
  } else {
    throw Error(ErrorKind::kUnsupported, "overlay needs a 1- or 3-channel input");
  }
  for (double& g : gray) g = std::clamp(g, 0.0, 1.0);
  return gray;
}

RgbImage overlay_image(const campipe::CamResult& cam, const archive::InputImage& input,
                       double alpha, ColorMap map) {
  require_2d(cam.map);
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "overlay alpha must lie in [0, 1]");
  }
  campipe::CamResult resized = cam;
  resized.map = campipe::resize_spatial(cam.map, input.height, input.width);
  const auto gray = grayscale(input);
  const double scale = value_scale(resized);
  RgbImage img;
  img.height = input.height;
  img.width = input.width;
  img.pixels.resize(gray.size() * 3);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const auto rgb = colorize(map, resized.map.values[i] * scale);
    for (int k = 0; k < 3; ++k) {
      img.pixels[i * 3 + k] = quantize(alpha * rgb[k] + (1.0 - alpha) * 255.0 * gray[i]);
    }
  }
  return img;
}

RgbImage overlay_image(const campipe::CamResult& cam, const archive::InputImage& input,
                       double alpha) {
  return overlay_image(cam, input, alpha, default_colormap(cam.scale_mode));
}

namespace {

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<io::Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

void png_warn(png_structp, png_const_charp) {}

[[noreturn]] void png_fail(png_structp png, png_const_charp) { png_longjmp(png, 1); }

struct ReadCursor {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

void read_from_span(png_structp png, png_bytep out, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (length > cur->data.size() - cur->pos) png_error(png, "truncated stream");
  std::memcpy(out, cur->data.data() + cur->pos, length);
  cur->pos += length;
}

// libpng reports errors by longjmp; each helper returns false on failure and
// keeps no objects with destructors alive across setjmp.
bool write_png(png_structp png, png_infop info, const RgbImage& image, io::Bytes* out) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_write_fn(png, out, write_to_vector, flush_noop);
  png_set_compression_level(png, 9);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t y = 0; y < image.height; ++y) {
    png_write_row(png, image.pixels.data() + std::size_t{y} * image.width * 3);
  }
  png_write_end(png, nullptr);
  return true;
}

bool read_png_header(png_structp png, png_infop info, ReadCursor* cursor) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_read_fn(png, cursor, read_from_span);
  png_read_info(png, info);
  return true;
}

bool read_png_rows(png_structp png, RgbImage* img) {
  if (setjmp(png_jmpbuf(png))) return false;
  for (std::uint32_t y = 0; y < img->height; ++y) {
    png_read_row(png, img->pixels.data() + std::size_t{y} * img->width * 3, nullptr);
  }
  png_read_end(png, nullptr);
  return true;
}

}  // namespace

io::Bytes encode_png(const RgbImage& image) {
  if (image.width == 0 || image.height == 0 ||
      image.pixels.size() != std::size_t{image.width} * image.height * 3) {
    throw Error(ErrorKind::kShapeMismatch, "png: pixel buffer does not match size");
  }
  io::Bytes out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw Error(ErrorKind::kIo, "png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  const bool ok = info && write_png(png, info, image, &out);
  png_destroy_write_struct(&png, &info);
  if (!ok) throw Error(ErrorKind::kIo, "png: encoding failed");
  return out;
}

RgbImage decode_png(std::span<const std::uint8_t> data) {
  if (data.size() < 8 || png_sig_cmp(data.data(), 0, 8) != 0) {
    throw Error(ErrorKind::kBadMagic, "png: bad signature");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw Error(ErrorKind::kIo, "png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{data, 0};
  RgbImage img;
  bool ok = info && read_png_header(png, info, &cursor);
  if (ok && (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB ||
             png_get_bit_depth(png, info) != 8)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::kUnsupported, "png: only 8-bit RGB is supported");
  }
  if (ok) {
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.pixels.resize(std::size_t{img.width} * img.height * 3);
    ok = read_png_rows(png, &img);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw Error(ErrorKind::kMalformed, "png: corrupt stream");
  return img;
}

io::Bytes render_cam(const campipe::CamResult& cam) { return encode_png(cam_image(cam)); }

io::Bytes overlay(const campipe::CamResult& cam, const archive::InputImage& input,
                  double alpha) {
  return encode_png(overlay_image(cam, input, alpha));
}

std::string png_name(const campipe::CamResult& cam) {
  return std::to_string(cam.sample_id) + "_" + std::to_string(cam.class_id) + "_" +
         schemes::to_string(cam.scheme) + "_" + campipe::to_string(cam.scale_mode) + ".png";
}

}  // namespace ifa::render
