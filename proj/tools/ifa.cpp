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

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ifa/archive.hpp"
#include "ifa/campipe.hpp"
#include "ifa/distribution.hpp"
#include "ifa/eval.hpp"
#include "ifa/importance.hpp"
#include "ifa/parallel.hpp"
#include "ifa/refnet.hpp"
#include "ifa/render.hpp"

namespace fs = std::filesystem;
using namespace ifa;

namespace {

[[noreturn]] void usage_error(const std::string& message) {
  throw Error(ErrorKind::kUsage, message);
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    io::write_text_atomic(out, text);
  }
}

fs::path meta_path(const fs::path& im_csv) {
  fs::path p = im_csv;
  return p.replace_extension(".meta.json");
}

importance::ImportanceMatrix load_im(const fs::path& path) {
  auto im = importance::im_from_csv(io::read_text(path));
  if (fs::exists(meta_path(path))) importance::apply_im_meta(im, io::read_text(meta_path(path)));
  return im;
}

std::pair<std::uint32_t, std::uint32_t> parse_size(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) {
      const auto n = static_cast<std::uint32_t>(std::stoul(text));
      return {n, n};
    }
    return {static_cast<std::uint32_t>(std::stoul(text.substr(0, x))),
            static_cast<std::uint32_t>(std::stoul(text.substr(x + 1)))};
  } catch (const std::exception&) {
    usage_error("--size expects N or HxW, got '" + text + "'");
  }
}

// Exactly one of the three mask rules, or none.
std::optional<importance::ThresholdRule> mask_rule(const std::optional<double>& top,
                                                   const std::optional<double>& bottom,
                                                   const std::vector<std::uint32_t>& features) {
  const int given = (top ? 1 : 0) + (bottom ? 1 : 0) + (features.empty() ? 0 : 1);
  if (given > 1) usage_error("--top-pct, --bottom-pct and --features are mutually exclusive");
  if (given == 0) return std::nullopt;
  importance::ThresholdRule rule;
  if (top) {
    rule.kind = importance::ThresholdKind::kTopPct;
    rule.pct = *top;
  } else if (bottom) {
    rule.kind = importance::ThresholdKind::kBottomPct;
    rule.pct = *bottom;
  } else {
    rule.kind = importance::ThresholdKind::kExplicit;
    rule.features = features;
  }
  return rule;
}

std::string mask_source(const fs::path& im_path) { return im_path.filename().string(); }

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Integrated feature analysis for class activation maps"};
  app.set_config("--config", "", "TOML/INI file whose keys mirror command-line flags");
  app.require_subcommand(1);
  unsigned workers = parallel::default_workers();
  app.add_option("--workers", workers, "Worker threads for per-sample processing")
      ->check(CLI::PositiveNumber);

  // validate
  auto* validate = app.add_subcommand("validate", "Check an archive and report findings");
  std::string v_archive, v_out;
  validate->add_option("archive", v_archive, "Archive directory")->required();
  validate->add_option("--out", v_out, "Write the JSON report here instead of stdout");

  // stats
  auto* stats = app.add_subcommand("stats", "Dataset-level CAM value distribution");
  std::string s_archive, s_scheme = "grad-cam", s_mode = "exact", s_out;
  std::optional<std::int32_t> s_class;
  bool s_pooled = false;
  std::vector<double> s_percentiles = distribution::default_percentiles();
  double s_compression = 200.0;
  stats->add_option("--archive", s_archive)->required();
  stats->add_option("--scheme", s_scheme);
  stats->add_option("--class", s_class, "Only this class (default: every class)");
  stats->add_flag("--pooled", s_pooled, "One entry pooled over each sample's true class");
  stats->add_option("--mode", s_mode, "exact or sketch");
  stats->add_option("--percentiles", s_percentiles);
  stats->add_option("--compression", s_compression, "t-digest compression (sketch mode)");
  stats->add_option("--out", s_out)->required();

  // im
  auto* im = app.add_subcommand("im", "Importance matrix and feature masks");
  std::string i_archive, i_scheme = "grad-cam", i_out, i_mask_out, i_from;
  bool i_unified = false;
  std::optional<double> i_top, i_bottom;
  std::vector<std::uint32_t> i_features;
  im->add_option("--archive", i_archive);
  im->add_option("--scheme", i_scheme);
  im->add_flag("--unified", i_unified, "Average over samples of each true class");
  im->add_option("--out", i_out, "im.csv path; a .meta.json sidecar is written next to it");
  im->add_option("--from", i_from, "Threshold an existing im.csv instead of building one");
  im->add_option("--top-pct", i_top);
  im->add_option("--bottom-pct", i_bottom);
  im->add_option("--features", i_features);
  im->add_option("--mask-out", i_mask_out);

  auto* drift = im->add_subcommand("drift", "Compare a train and a test importance matrix");
  std::string d_train, d_test, d_out;
  drift->add_option("--train", d_train)->required();
  drift->add_option("--test", d_test)->required();
  drift->add_option("--out", d_out);

  auto* redundancy = im->add_subcommand("redundancy", "Rarely activated features");
  std::string r_im, r_out;
  double r_eps = 0.01;
  redundancy->add_option("--im", r_im)->required();
  redundancy->add_option("--eps", r_eps);
  redundancy->add_option("--out", r_out);

  auto* outliers = im->add_subcommand("outliers", "Samples far from their class column");
  std::string o_archive, o_im, o_scheme = "grad-cam", o_out;
  std::size_t o_top = 20;
  outliers->add_option("--archive", o_archive)->required();
  outliers->add_option("--im", o_im)->required();
  outliers->add_option("--scheme", o_scheme);
  outliers->add_option("--top", o_top, "Number of samples to report");
  outliers->add_option("--out", o_out);

  // cam
  auto* cam = app.add_subcommand("cam", "Generate CAMs");
  std::string c_archive, c_scheme = "grad-cam", c_scale = "common", c_stats, c_mask, c_size, c_out;
  std::optional<std::int32_t> c_class;
  cam->add_option("--archive", c_archive)->required();
  cam->add_option("--scheme", c_scheme);
  cam->add_option("--class", c_class, "Explicit class (default: each sample's true class)");
  cam->add_option("--scale", c_scale, "raw, individual or common");
  cam->add_option("--stats", c_stats, "Stats file from `ifa stats` (needed for common)");
  cam->add_option("--mask", c_mask, "Feature mask from `ifa im --mask-out`");
  cam->add_option("--size", c_size, "Output size N or HxW (default: input size)");
  cam->add_option("--out", c_out)->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluation metrics");
  eval_cmd->require_subcommand(1);

  auto* consistency = eval_cmd->add_subcommand("consistency", "CAM sums vs logits");
  std::string e_cams, e_archive, e_out, e_csv;
  std::optional<std::int32_t> e_class;
  consistency->add_option("--cams", e_cams)->required();
  consistency->add_option("--class", e_class, "Use only CAMs of this class");
  consistency->add_option("--archive", e_archive)->required();
  consistency->add_option("--out", e_out);
  consistency->add_option("--csv", e_csv, "Per-sample consistency.csv");

  auto* mask_acc = eval_cmd->add_subcommand("mask-acc", "Accuracy with principal features only");
  std::string m_archive, m_im, m_mask, m_out;
  std::optional<double> m_top;
  mask_acc->add_option("--archive", m_archive)->required();
  mask_acc->add_option("--im", m_im);
  mask_acc->add_option("--top-pct", m_top);
  mask_acc->add_option("--mask", m_mask);
  mask_acc->add_option("--out", m_out);

  auto* incdrop = eval_cmd->add_subcommand("incdrop", "Average increase / drop");
  incdrop->require_subcommand(1);
  auto* emit_cmd = incdrop->add_subcommand("emit", "Write masked-input jobs");
  std::string j_cams, j_archive, j_out;
  double j_threshold = 0.0;
  emit_cmd->add_option("--cams", j_cams)->required();
  emit_cmd->add_option("--archive", j_archive)->required();
  emit_cmd->add_option("--out", j_out)->required();
  emit_cmd->add_option("--threshold", j_threshold, "Zero mask values below t");
  auto* collect = incdrop->add_subcommand("collect", "Aggregate a results file");
  std::string k_results, k_out;
  collect->add_option("--results", k_results)->required();
  collect->add_option("--out", k_out);

  // refnet
  auto* refnet_cmd = app.add_subcommand("refnet", "Reference network");
  refnet_cmd->require_subcommand(1);
  auto* gen = refnet_cmd->add_subcommand("gen", "Generate a shapes dataset");
  std::uint64_t g_seed = 42;
  std::size_t g_n = 2000;
  std::string g_out;
  gen->add_option("--seed", g_seed);
  gen->add_option("--n", g_n);
  gen->add_option("--out", g_out)->required();

  auto* train = refnet_cmd->add_subcommand("train", "Train on a dataset");
  std::string t_data, t_head = "gap_linear", t_out;
  std::size_t t_epochs = 10, t_batch = 32;
  std::optional<double> t_lr;
  std::uint64_t t_seed = 7;
  train->add_option("--data", t_data)->required();
  train->add_option("--head", t_head, "gap_linear or flatten_linear");
  train->add_option("--epochs", t_epochs);
  train->add_option("--lr", t_lr, "Default: 0.5 for gap_linear, 0.05 for flatten_linear");
  train->add_option("--batch", t_batch);
  train->add_option("--seed", t_seed);
  train->add_option("--out", t_out)->required();

  auto* dump = refnet_cmd->add_subcommand("dump", "Dump an archive");
  std::string u_model, u_data, u_out, u_grads = "all", u_split = "test", u_id;
  dump->add_option("--model", u_model)->required();
  dump->add_option("--data", u_data)->required();
  dump->add_option("--out", u_out)->required();
  dump->add_option("--grads", u_grads, "all or true-class");
  dump->add_option("--split", u_split);
  dump->add_option("--archive-id", u_id);

  // render
  auto* render_cmd = app.add_subcommand("render", "Render CAMs to PNG");
  std::string p_cams, p_out, p_archive;
  std::optional<double> p_alpha;
  render_cmd->add_option("--cams", p_cams)->required();
  render_cmd->add_option("--out", p_out)->required();
  render_cmd->add_option("--archive", p_archive, "Archive with inputs, for overlays");
  render_cmd->add_option("--alpha", p_alpha, "Overlay the input with this CAM weight");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (*validate) {
    const auto report = archive::validate_archive(v_archive);
    emit(report.to_json(), v_out);
    if (!report.clean()) {
      std::cerr << "ifa: " << report.findings.size() << " finding(s)\n";
      return 3;
    }
    return 0;
  }

  if (*stats) {
    distribution::CollectOptions opts;
    opts.mode = distribution::parse_stats_mode(s_mode);
    opts.percentiles = s_percentiles;
    opts.workers = workers;
    opts.compression = s_compression;
    if (s_pooled && s_class) usage_error("--pooled and --class are mutually exclusive");
    archive::ArchiveReader reader(s_archive);
    const auto scheme = schemes::parse_scheme(s_scheme);
    distribution::StatsFile file;
    if (s_pooled) {
      file.entries.push_back(
          distribution::collect_stats(reader, scheme, distribution::kPerTrueClass, opts));
    } else if (s_class) {
      file.entries.push_back(distribution::collect_stats(reader, scheme, *s_class, opts));
    } else {
      for (std::uint32_t c = 0; c < reader.manifest().num_classes; ++c) {
        file.entries.push_back(
            distribution::collect_stats(reader, scheme, static_cast<std::int32_t>(c), opts));
      }
    }
    io::write_text_atomic(s_out, distribution::stats_to_json(file));
    return 0;
  }

  if (*im) {
    if (*drift) {
      emit(importance::im_drift(load_im(d_train), load_im(d_test)).to_json(), d_out);
      return 0;
    }
    if (*redundancy) {
      emit(importance::redundancy_report(load_im(r_im), r_eps).to_json(), r_out);
      return 0;
    }
    if (*outliers) {
      archive::ArchiveReader reader(o_archive);
      const auto matrix = load_im(o_im);
      const auto scheme = schemes::parse_scheme(o_scheme);
      struct Scored {
        std::uint64_t id;
        std::int32_t gt;
        double score;
      };
      std::vector<Scored> scored;
      const auto& ids = reader.sample_ids();
      parallel::ordered_map_reduce(
          ids, workers,
          [&](std::uint64_t id) -> std::optional<Scored> {
            const auto rec = reader.read(id);
            if (rec.true_class < 0 || !rec.has_grads(rec.true_class)) return std::nullopt;
            const auto contrib =
                importance::contribution(schemes::weighted_features(scheme, rec, rec.true_class));
            const auto col = matrix.column(static_cast<std::size_t>(rec.true_class));
            return Scored{id, rec.true_class, importance::outlier_score(contrib, col)};
          },
          [&](std::optional<Scored>&& s) {
            if (s) scored.push_back(*s);
          });
      std::stable_sort(scored.begin(), scored.end(),
                       [](const Scored& a, const Scored& b) { return a.score > b.score; });
      nlohmann::json doc = nlohmann::json::array();
      for (std::size_t i = 0; i < std::min(o_top, scored.size()); ++i) {
        doc.push_back({{"sample_id", scored[i].id},
                       {"true_class", scored[i].gt},
                       {"score", scored[i].score}});
      }
      emit(nlohmann::json{{"outliers", doc}}.dump(2) + "\n", o_out);
      return 0;
    }
    const auto rule = mask_rule(i_top, i_bottom, i_features);
    if (rule && i_mask_out.empty()) usage_error("a mask rule needs --mask-out");
    if (!rule && !i_mask_out.empty()) {
      usage_error("--mask-out needs --top-pct, --bottom-pct or --features");
    }
    importance::ImportanceMatrix matrix;
    std::string source;
    if (!i_from.empty()) {
      if (!i_archive.empty()) usage_error("--from and --archive are mutually exclusive");
      matrix = load_im(i_from);
      source = mask_source(i_from);
    } else {
      if (i_archive.empty()) usage_error("im needs --archive (or --from with a mask rule)");
      if (i_out.empty() && !rule) usage_error("im needs --out");
      archive::ArchiveReader reader(i_archive);
      const auto scheme = schemes::parse_scheme(i_scheme);
      matrix = i_unified ? importance::build_im_unified(reader, scheme, workers)
                         : importance::build_im_per_class_all(reader, scheme, workers);
      source = i_out.empty() ? matrix.archive_id : mask_source(i_out);
      if (!i_out.empty()) {
        io::write_text_atomic(i_out, importance::im_to_csv(matrix));
        io::write_text_atomic(meta_path(i_out), importance::im_meta_to_json(matrix));
      }
    }
    if (rule) {
      auto mask = importance::threshold_im(matrix, *rule);
      mask.source = source;
      io::write_text_atomic(i_mask_out, importance::mask_to_json(mask));
    }
    return 0;
  }

  if (*cam) {
    const auto mode = campipe::parse_scale_mode(c_scale);
    if (mode == campipe::ScaleMode::kCommon && c_stats.empty()) {
      usage_error("--scale common requires --stats");
    }
    archive::ArchiveReader reader(c_archive);
    const auto scheme = schemes::parse_scheme(c_scheme);
    std::optional<distribution::StatsFile> stats_file;
    std::optional<importance::FeatureMask> mask;
    if (!c_stats.empty()) stats_file = distribution::stats_from_json(io::read_text(c_stats));
    if (!c_mask.empty()) mask = importance::mask_from_json(io::read_text(c_mask));
    campipe::GenerateOptions opts;
    if (c_class) opts.class_id = *c_class;
    opts.scale_mode = mode;
    opts.stats = stats_file ? &*stats_file : nullptr;
    opts.mask = mask ? &*mask : nullptr;
    if (!c_size.empty()) opts.target = parse_size(c_size);
    opts.workers = workers;
    campipe::CamWriter writer(c_out);
    std::size_t n = 0;
    campipe::generate(reader, scheme, opts, [&](campipe::CamResult&& r) {
      writer.add(r);
      ++n;
    });
    writer.finish(reader.manifest().archive_id);
    std::cerr << "ifa: wrote " << n << " CAM(s) to " << c_out << "\n";
    return 0;
  }

  if (*eval_cmd) {
    if (*consistency) {
      const auto index = campipe::read_cam_index(e_cams);
      archive::ArchiveReader reader(e_archive);
      std::vector<double> sums, logits;
      std::vector<std::uint64_t> ids;
      std::optional<std::int32_t> cls = e_class;
      for (const auto& e : index.entries) {
        if (e_class && e.class_id != *e_class) continue;
        if (!cls) cls = e.class_id;
        if (e.class_id != *cls) {
          usage_error("CAMs span several classes; pass --class to pick one");
        }
        const auto rec = reader.read(e.sample_id);
        if (e.class_id < 0 || static_cast<std::size_t>(e.class_id) >= rec.logits.size()) {
          throw Error(ErrorKind::kInvalidArgument, "CAM class out of range");
        }
        ids.push_back(e.sample_id);
        sums.push_back(e.sum);
        logits.push_back(rec.logits[static_cast<std::size_t>(e.class_id)]);
      }
      auto report = eval::consistency(sums, logits);
      report.sample_ids = std::move(ids);
      report.scheme = schemes::to_string(index.scheme);
      report.scale_mode = campipe::to_string(index.scale_mode);
      report.class_id = cls.value_or(0);
      emit(report.to_json(), e_out);
      if (!e_csv.empty()) io::write_text_atomic(e_csv, report.to_csv());
      return 0;
    }
    if (*mask_acc) {
      archive::ArchiveReader reader(m_archive);
      importance::FeatureMask mask;
      if (!m_mask.empty()) {
        if (!m_im.empty() || m_top) usage_error("--mask excludes --im/--top-pct");
        mask = importance::mask_from_json(io::read_text(m_mask));
      } else {
        if (m_im.empty() || !m_top) usage_error("mask-acc needs --mask or --im with --top-pct");
        importance::ThresholdRule rule;
        rule.pct = *m_top;
        mask = importance::threshold_im(load_im(m_im), rule);
        mask.source = mask_source(m_im);
      }
      emit(eval::masked_accuracy(reader, mask, workers).to_json(), m_out);
      return 0;
    }
    if (*incdrop) {
      if (*emit_cmd) {
        const auto index = campipe::read_cam_index(j_cams);
        archive::ArchiveReader reader(j_archive);
        eval::MaskJobEmitter emitter(j_out, reader, j_threshold);
        for (const auto& e : index.entries) emitter.add(campipe::read_cam(e.file));
        const auto manifest = emitter.finish(index.name);
        std::cerr << "ifa: wrote " << manifest.jobs.size() << " job(s) to " << j_out << "\n";
        return 0;
      }
      const auto pairs = eval::results_from_json(io::read_text(k_results));
      emit(eval::collect_inc_drop(pairs).to_json(), k_out);
      return 0;
    }
  }

  if (*refnet_cmd) {
    if (*gen) {
      refnet::save_dataset(refnet::gen_dataset(g_seed, g_n), g_out);
      return 0;
    }
    if (*train) {
      const auto data = refnet::load_dataset(t_data);
      refnet::TrainOptions opts;
      opts.head = archive::parse_head_kind(t_head);
      opts.epochs = t_epochs;
      opts.lr = t_lr;
      opts.batch = t_batch;
      opts.seed = t_seed;
      opts.workers = workers;
      opts.on_epoch = [](std::size_t epoch, double loss, double acc) {
        std::fprintf(stderr, "epoch %zu loss %.4f acc %.4f\n", epoch, loss, acc);
      };
      const auto model = refnet::train(data, opts);
      refnet::save_model(model, t_out);
      std::fprintf(stderr, "train accuracy %.4f\n", refnet::accuracy(model, data, workers));
      return 0;
    }
    if (*dump) {
      refnet::DumpOptions opts;
      if (u_grads == "all") {
        opts.grads = refnet::GradMode::kAllClasses;
      } else if (u_grads == "true-class") {
        opts.grads = refnet::GradMode::kTrueClass;
      } else {
        usage_error("--grads must be all or true-class");
      }
      opts.split = archive::parse_split(u_split);
      opts.archive_id = u_id;
      opts.workers = workers;
      refnet::dump_archive(refnet::load_model(u_model), refnet::load_dataset(u_data), u_out,
                           opts);
      return 0;
    }
  }

  if (*render_cmd) {
    if (p_alpha && p_archive.empty()) usage_error("--alpha needs --archive");
    const auto index = campipe::read_cam_index(p_cams);
    std::optional<archive::ArchiveReader> reader;
    if (!p_archive.empty()) reader.emplace(p_archive);
    io::ensure_directory(p_out);
    parallel::for_each_index(index.entries.size(), workers, [&](std::size_t i) {
      const auto c = campipe::read_cam(index.entries[i].file);
      io::Bytes png;
      if (reader) {
        const auto rec = reader->read(c.sample_id);
        if (!rec.input) {
          throw Error(ErrorKind::kInvalidArgument,
                      "sample " + std::to_string(c.sample_id) + " has no stored input");
        }
        png = render::overlay(c, *rec.input, p_alpha.value_or(0.5));
      } else {
        png = render::render_cam(c);
      }
      io::write_file_atomic(fs::path(p_out) / render::png_name(c), png);
    });
    return 0;
  }
  return 0;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "ifa: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "ifa: io: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "ifa: " << e.what() << "\n";
    return 3;
  }
}
