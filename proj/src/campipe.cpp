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

#include "ifa/campipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "ifa/parallel.hpp"

namespace ifa::campipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const double kAtanh09 = std::atanh(0.9);
const double kAtanh01 = std::atanh(0.1);

}  // namespace

// alpha * x + beta, rewritten about P10 so large offsets do not cancel.
double SigmaParams::operator()(double x) const {
  return std::tanh(alpha * (x - p10) + kAtanh01);
}

SigmaParams sigma_from_percentiles(double p10, double p90) {
  if (!(p90 > p10) || !std::isfinite(p10) || !std::isfinite(p90)) {
    throw Error(ErrorKind::kDegenerate,
                "degenerate percentiles: P90 must exceed P10 (got P10=" +
                    std::to_string(p10) + ", P90=" + std::to_string(p90) + ")");
  }
  SigmaParams s;
  s.p10 = p10;
  s.p90 = p90;
  s.alpha = (kAtanh09 - kAtanh01) / (p90 - p10);
  // Solves tanh(alpha*P10 + beta) = 0.1 and tanh(alpha*P90 + beta) = 0.9.
  s.beta = (p10 * kAtanh09 - p90 * kAtanh01) / (p10 - p90);
  return s;
}

void apply_sigma(std::span<double> map, const SigmaParams& params) {
  for (double& v : map) v = params(v);
}

double Map::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

Map compose_raw(const schemes::WeightedFeatureStack& stack,
                const std::vector<std::uint8_t>* mask) {
  if (mask && mask->size() != stack.num_features) {
    throw Error(ErrorKind::kShapeMismatch,
                "mask length " + std::to_string(mask->size()) + " != F=" +
                    std::to_string(stack.num_features));
  }
  Map out;
  out.dims = stack.dims;
  out.values.assign(stack.spatial_size(), 0.0);
  for (std::size_t f = 0; f < stack.num_features; ++f) {
    if (mask && !(*mask)[f]) continue;
    const auto w = stack.feature(f);
    for (std::size_t i = 0; i < w.size(); ++i) out.values[i] += w[i];
  }
  return out;
}

Map resize_spatial(const Map& map, std::uint32_t height, std::uint32_t width) {
  if (map.dims.size() != 2) {
    throw Error(ErrorKind::kUnsupported, "spatial resizing is implemented for 2D maps only");
  }
  if (height == 0 || width == 0) {
    throw Error(ErrorKind::kInvalidArgument, "resize target must be non-empty");
  }
  const std::uint32_t h = map.dims[0];
  const std::uint32_t w = map.dims[1];
  if (h == height && w == width) return map;

  // Source coordinate (i + 0.5) * in / out - 0.5, clamped to [0, in - 1].
  struct Tap {
    std::uint32_t lo, hi;
    double frac;
  };
  auto taps = [](std::uint32_t in, std::uint32_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::uint32_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::uint32_t>(std::floor(src));
      const std::uint32_t hi = std::min(lo + 1, in - 1);
      t[i] = {lo, hi, src - lo};
    }
    return t;
  };
  const auto ty = taps(h, height);
  const auto tx = taps(w, width);
  Map out;
  out.dims = {height, width};
  out.values.resize(static_cast<std::size_t>(height) * width);
  const auto& v = map.values;
  for (std::uint32_t y = 0; y < height; ++y) {
    const Tap& a = ty[y];
    for (std::uint32_t x = 0; x < width; ++x) {
      const Tap& b = tx[x];
      const double p00 = v[a.lo * w + b.lo];
      const double p01 = v[a.lo * w + b.hi];
      const double p10 = v[a.hi * w + b.lo];
      const double p11 = v[a.hi * w + b.hi];
      const double top = (1.0 - b.frac) * p00 + b.frac * p01;
      const double bottom = (1.0 - b.frac) * p10 + b.frac * p11;
      const double value = (1.0 - a.frac) * top + a.frac * bottom;
      // Rounding must not push a convex combination outside its inputs.
      const double lo = std::min(std::min(p00, p01), std::min(p10, p11));
      const double hi = std::max(std::max(p00, p01), std::max(p10, p11));
      out.values[static_cast<std::size_t>(y) * width + x] = std::clamp(value, lo, hi);
    }
  }
  return out;
}

void scale_individual(std::span<double> map) {
  if (map.empty()) return;
  for (double& v : map) v = std::max(0.0, v);
  const auto [lo_it, hi_it] = std::minmax_element(map.begin(), map.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    std::fill(map.begin(), map.end(), 0.0);
    return;
  }
  for (double& v : map) v = (v - lo) / (hi - lo);
}

std::string to_string(ScaleMode mode) {
  switch (mode) {
    case ScaleMode::kRaw: return "raw";
    case ScaleMode::kIndividual: return "individual";
    case ScaleMode::kCommon: return "common";
  }
  return "raw";
}

ScaleMode parse_scale_mode(const std::string& text) {
  if (text == "raw") return ScaleMode::kRaw;
  if (text == "individual") return ScaleMode::kIndividual;
  if (text == "common") return ScaleMode::kCommon;
  throw Error(ErrorKind::kInvalidArgument, "unknown scale mode: " + text);
}

std::string CamResult::name() const {
  std::string n = schemes::to_string(scheme);
  if (scale_mode == ScaleMode::kCommon) n = "S-" + n;
  if (mask_provenance) n = "FS-" + n;
  return n;
}

// ---------------------------------------------------------------------------

CamResult generate_one(const archive::SampleRecord& record, schemes::SchemeId scheme,
                       std::int32_t class_id, ScaleMode mode, const SigmaParams* sigma,
                       const importance::FeatureMask* mask,
                       std::optional<std::pair<std::uint32_t, std::uint32_t>> target) {
  if (mode == ScaleMode::kCommon && sigma == nullptr) {
    throw Error(ErrorKind::kInvalidArgument, "common scale requires distribution stats");
  }
  const auto stack = schemes::weighted_features(scheme, record, class_id);
  const std::vector<std::uint8_t>* mask_row =
      mask ? &mask->for_class(static_cast<std::size_t>(class_id)) : nullptr;
  Map map = compose_raw(stack, mask_row);

  if (!target && record.input) target = {{record.input->height, record.input->width}};
  if (target) {
    map = resize_spatial(map, target->first, target->second);
  } else if (map.dims.size() != 2) {
    throw Error(ErrorKind::kUnsupported, "CAM generation is implemented for 2D maps only");
  }

  switch (mode) {
    case ScaleMode::kRaw: break;
    case ScaleMode::kIndividual: scale_individual(map.values); break;
    case ScaleMode::kCommon: apply_sigma(map.values, *sigma); break;
  }

  CamResult cam;
  cam.sample_id = record.sample_id;
  cam.class_id = class_id;
  cam.scheme = scheme;
  cam.scale_mode = mode;
  if (mask) cam.mask_provenance = mask->rule.describe() + " from " + mask->source;
  cam.sum = map.sum();
  cam.map = std::move(map);
  return cam;
}

void generate(const archive::ArchiveReader& reader, schemes::SchemeId scheme,
              const GenerateOptions& options,
              const std::function<void(CamResult&&)>& sink) {
  const auto& m = reader.manifest();
  if (options.class_id != distribution::kPerTrueClass &&
      (options.class_id < 0 ||
       static_cast<std::uint32_t>(options.class_id) >= m.num_classes)) {
    throw Error(ErrorKind::kInvalidArgument,
                "class " + std::to_string(options.class_id) + " out of range");
  }
  if (options.mask && (options.mask->num_features != m.num_features ||
                       options.mask->per_class.size() != m.num_classes)) {
    throw Error(ErrorKind::kShapeMismatch, "mask shape does not match the archive");
  }
  // Build sigma for every class up front so workers only read.
  std::vector<std::optional<SigmaParams>> sigmas(m.num_classes);
  if (options.scale_mode == ScaleMode::kCommon) {
    if (options.stats == nullptr) {
      throw Error(ErrorKind::kInvalidArgument, "common scale requires distribution stats");
    }
    for (std::uint32_t c = 0; c < m.num_classes; ++c) {
      const bool wanted = options.class_id == distribution::kPerTrueClass ||
                          options.class_id == static_cast<std::int32_t>(c);
      if (!wanted) continue;
      const auto* entry = options.stats->find(static_cast<std::int32_t>(c));
      if (entry == nullptr) {
        if (options.class_id == distribution::kPerTrueClass) continue;
        throw Error(ErrorKind::kInvalidArgument,
                    "stats have no entry for class " + std::to_string(c));
      }
      if (entry->scheme != scheme) {
        throw Error(ErrorKind::kIncompatible, "stats were collected for scheme " +
                                                  schemes::to_string(entry->scheme));
      }
      sigmas[c] = sigma_from_percentiles(entry->percentile(10), entry->percentile(90));
    }
  }

  parallel::ordered_map_reduce(
      reader.sample_ids(), options.workers,
      [&](std::uint64_t id) -> std::optional<CamResult> {
        const auto r = reader.read(id);
        const std::int32_t cls =
            options.class_id == distribution::kPerTrueClass ? r.true_class : options.class_id;
        if (cls < 0) return std::nullopt;
        const SigmaParams* sigma = nullptr;
        if (options.scale_mode == ScaleMode::kCommon) {
          if (!sigmas[cls]) {
            throw Error(ErrorKind::kInvalidArgument,
                        "stats have no entry for class " + std::to_string(cls));
          }
          sigma = &*sigmas[cls];
        }
        return generate_one(r, scheme, cls, options.scale_mode, sigma, options.mask,
                            options.target);
      },
      [&](std::optional<CamResult>&& cam) {
        if (cam) sink(std::move(*cam));
      });
}

// ---------------------------------------------------------------------------
// Files

namespace {
constexpr char kCamMagic[] = "ICM1";
}

io::Bytes encode_cam(const CamResult& cam) {
  if (cam.map.dims.size() != 2) {
    throw Error(ErrorKind::kUnsupported, "CAM files hold 2D maps only");
  }
  io::BinaryWriter w;
  w.magic(kCamMagic);
  w.put<std::uint64_t>(cam.sample_id);
  w.put<std::int32_t>(cam.class_id);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(cam.scale_mode));
  w.put<std::uint32_t>(cam.map.dims[0]);
  w.put<std::uint32_t>(cam.map.dims[1]);
  std::vector<float> payload(cam.map.values.begin(), cam.map.values.end());
  w.put_floats(payload);
  return std::move(w).bytes();
}

CamResult decode_cam(std::span<const std::uint8_t> data, const std::string& context) {
  io::BinaryReader in(data, context);
  if (!in.magic(kCamMagic)) throw Error(ErrorKind::kBadMagic, context + ": bad magic");
  CamResult cam;
  cam.sample_id = in.get<std::uint64_t>();
  cam.class_id = in.get<std::int32_t>();
  const auto mode = in.get<std::uint8_t>();
  if (mode > 2) throw Error(ErrorKind::kCorruptRecord, context + ": bad scale mode");
  cam.scale_mode = static_cast<ScaleMode>(mode);
  const auto h = in.get<std::uint32_t>();
  const auto w = in.get<std::uint32_t>();
  cam.map.dims = {h, w};
  const auto payload = in.get_floats(static_cast<std::size_t>(h) * w);
  if (in.remaining() != 0) throw Error(ErrorKind::kCorruptRecord, context + ": trailing bytes");
  cam.map.values.assign(payload.begin(), payload.end());
  cam.sum = cam.map.sum();
  return cam;
}

namespace {

std::string cam_file_name(std::uint64_t id) {
  char name[40];
  std::snprintf(name, sizeof(name), "%08llu.camf32", static_cast<unsigned long long>(id));
  return name;
}

}  // namespace

CamWriter::CamWriter(fs::path dir) : dir_(std::move(dir)) { io::ensure_directory(dir_); }

void CamWriter::add(const CamResult& cam) {
  io::write_file_atomic(dir_ / cam_file_name(cam.sample_id), encode_cam(cam));
  CamResult meta = cam;
  meta.map.values.clear();
  index_.push_back(std::move(meta));
}

void CamWriter::finish(const std::string& archive_id) {
  json doc;
  doc["format"] = "ifa-cams";
  doc["archive_id"] = archive_id;
  doc["resampling"] = kResampling;
  if (!index_.empty()) {
    const auto& first = index_.front();
    doc["name"] = first.name();
    doc["scheme"] = schemes::to_string(first.scheme);
    doc["scale_mode"] = to_string(first.scale_mode);
    doc["mask"] = first.mask_provenance ? json(*first.mask_provenance) : json(nullptr);
  }
  json entries = json::array();
  for (const auto& cam : index_) {
    entries.push_back({{"sample_id", cam.sample_id},
                       {"class_id", cam.class_id},
                       {"sum", cam.sum},
                       {"height", cam.map.dims[0]},
                       {"width", cam.map.dims[1]},
                       {"file", cam_file_name(cam.sample_id)}});
  }
  doc["samples"] = std::move(entries);
  io::write_text_atomic(dir_ / "index.json", doc.dump(2) + "\n");
}

CamIndex read_cam_index(const fs::path& dir) {
  CamIndex index;
  try {
    const json doc = json::parse(io::read_text(dir / "index.json"));
    if (doc.value("format", "") != "ifa-cams") {
      throw Error(ErrorKind::kBadMagic, "not an ifa CAM index: " + dir.string());
    }
    index.archive_id = doc.value("archive_id", "");
    index.name = doc.value("name", "");
    if (doc.contains("scheme")) index.scheme = schemes::parse_scheme(doc["scheme"].get<std::string>());
    if (doc.contains("scale_mode")) index.scale_mode = parse_scale_mode(doc["scale_mode"].get<std::string>());
    for (const auto& e : doc.at("samples")) {
      index.entries.push_back({e.at("sample_id").get<std::uint64_t>(),
                               e.at("class_id").get<std::int32_t>(),
                               e.at("sum").get<double>(),
                               dir / e.at("file").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kMalformed, std::string("CAM index: ") + e.what());
  }
  return index;
}

CamResult read_cam(const fs::path& file) {
  return decode_cam(io::read_file(file), file.filename().string());
}

}  // namespace ifa::campipe
