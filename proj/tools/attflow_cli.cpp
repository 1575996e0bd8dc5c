// attflow: command-line pipeline for joint attention estimation on synthetic scenes.
//
// Exit codes: 0 ok, 1 internal, 2 usage or config, 3 missing or unreadable file,
// 4 version mismatch, 5 malformed file, 6 training failure, 7 invalid parameter.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attflow/dataset_io.hpp"
#include "attflow/errors.hpp"
#include "attflow/eval.hpp"
#include "attflow/heatmap.hpp"
#include "attflow/run_config.hpp"
#include "attflow/saliency.hpp"
#include "attflow/train.hpp"

namespace fs = std::filesystem;
using namespace attflow;

namespace {

// ATTFLOW_LOG: 0 silent, 1 progress (default), 2 per-step losses.
int log_level() {
  const char* env = std::getenv("ATTFLOW_LOG");
  if (!env || !*env) return 1;
  return std::atoi(env);
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << '\n';
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> tau;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.tau) {
    if (!(*c.tau >= 0.0 && *c.tau <= 1.0)) throw ConfigError("--tau must be in [0,1]");
    cfg.tau = c.tau;
  }
  return cfg;
}

void echo_config(const RunConfig& cfg, const fs::path& out_dir) {
  std::ofstream os(out_dir / "config.ini");
  if (!os) throw IoError("cannot write " + (out_dir / "config.ini").string());
  os << format_run_config(cfg);
}

fs::path make_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  return out;
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path);
}

std::vector<Image> images_of(const std::vector<scene::Scene>& scenes) {
  std::vector<Image> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(s.image);
  return out;
}

int cmd_scenegen(const Common& c) {
  RunConfig cfg = resolve_config(c);
  if (c.seed) cfg.scene.master_seed = *c.seed;
  const fs::path out = make_out_dir(c.out);
  const scene::Dataset ds = scene::generate_dataset(cfg.scene);
  io::write_dataset(out, ds);
  echo_config(cfg, out);
  info("scenegen: wrote " + std::to_string(ds.train.size()) + "/" + std::to_string(ds.val.size()) +
       "/" + std::to_string(ds.test.size()) + " scenes to " + out.string());
  return 0;
}

int cmd_saliency(const std::string& image_path, const Common& c) {
  require_file(image_path);
  if (c.out.empty()) throw ConfigError("--out is required");
  const Image img = read_pnm(image_path);
  if (img.channels != 3) throw ParameterError("saliency: expected an RGB (P6) image");
  const auto map = saliency::compute_saliency(img);
  const fs::path out(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_pgm(out, map.values);
  return 0;
}

std::vector<Image> targets_for(const std::vector<scene::Scene>& scenes,
                               const heatmap::FusionParams& fusion) {
  const auto examples = train::make_examples(scenes, fusion);
  std::vector<Image> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.target);
  return out;
}

int cmd_targets(const std::string& dataset_dir, const Common& c) {
  RunConfig cfg = resolve_config(c);
  const scene::Dataset ds = io::read_dataset(dataset_dir);
  const fs::path out = make_out_dir(c.out);
  const std::pair<const char*, const std::vector<scene::Scene>*> splits[] = {
      {"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};
  for (const auto& [name, scenes] : splits) {
    io::write_targets(out / (std::string(name) + ".tgt"), targets_for(*scenes, cfg.heatmap));
  }
  echo_config(cfg, out);
  info("targets: wrote " + out.string());
  return 0;
}

int cmd_train(const std::string& dataset_dir, const std::string& variant_name,
              const std::string& targets_dir, const std::string& resume_path, const Common& c) {
  RunConfig cfg = resolve_config(c);
  if (c.seed) cfg.train.seed = *c.seed;
  const model::Variant variant = model::parse_variant(variant_name);
  const scene::Dataset ds = io::read_dataset(dataset_dir);
  if (ds.train.empty()) throw ConfigError("train: dataset has no training scenes");

  std::vector<train::Example> examples;
  if (!targets_dir.empty()) {
    const fs::path tpath = fs::path(targets_dir) / "train.tgt";
    require_file(tpath.string());
    const auto targets = io::read_targets(tpath);
    if (targets.size() != ds.train.size()) {
      throw FormatError("targets: " + std::to_string(targets.size()) + " maps for " +
                            std::to_string(ds.train.size()) + " scenes",
                        0);
    }
    for (std::size_t i = 0; i < targets.size(); ++i) examples.push_back({ds.train[i].image, targets[i]});
  } else {
    examples = train::make_examples(ds.train, cfg.heatmap);
  }

  std::optional<train::Checkpoint> resume;
  if (!resume_path.empty()) {
    require_file(resume_path);
    resume = train::load_checkpoint(resume_path);
    cfg.model = resume->model;
  }

  const fs::path out = make_out_dir(c.out);
  echo_config(cfg, out);
  const int level = log_level();
  const std::size_t steps_per_epoch =
      (examples.size() + cfg.train.batch_size - 1) / std::max<std::size_t>(cfg.train.batch_size, 1);
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  auto progress = [&](const train::LossRecord& r) {
    if (level >= 2) std::fprintf(stderr, "step %zu loss %.6g\n", r.step, r.loss);
    epoch_sum += r.loss;
    if (++epoch_steps == steps_per_epoch) {
      if (level >= 1) std::fprintf(stderr, "epoch %zu mean loss %.6g\n", r.epoch, epoch_sum / double(epoch_steps));
      epoch_sum = 0.0;
      epoch_steps = 0;
    }
  };
  info("train: " + model::variant_name(variant) + " on " + std::to_string(examples.size()) + " scenes");
  const auto result = train::train(examples, variant, cfg.model, cfg.train, resume, progress);
  train::save_checkpoint(result.checkpoint, (out / "checkpoint.bin").string());
  train::write_loss_csv(result.log, (out / "loss.csv").string());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_dir, std::size_t overlays,
             const Common& c) {
  RunConfig cfg = resolve_config(c);
  require_file(ckpt_path);
  const train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
  model::AttentionFlow net = train::restore_model(ckpt);
  const scene::Dataset ds = io::read_dataset(dataset_dir);
  if (ds.test.empty()) throw ConfigError("eval: dataset has no test scenes");

  double tau = 0.0;
  if (cfg.tau) {
    tau = *cfg.tau;
  } else {
    tau = eval::calibrate_threshold(net, ds.val).tau;
    info("eval: calibrated tau " + std::to_string(tau) + " on " + std::to_string(ds.val.size()) + " val scenes");
  }

  const fs::path out = make_out_dir(c.out);
  const auto images = images_of(ds.test);
  const auto predictions = eval::predict(net, images);
  const auto report = eval::evaluate(predictions, ds.test, tau, cfg.eval);
  eval::write_report_csv(report, (out / "report.csv").string());
  {
    std::ofstream os(out / "summary.txt");
    if (!os) throw IoError("cannot write " + (out / "summary.txt").string());
    os << eval::summary_text(report);
  }
  for (std::size_t i = 0; i < std::min(overlays, report.frames.size()); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "overlay_%06zu.ppm", i);
    write_ppm(out / name, eval::overlay(images[i], predictions[i], report.frames[i], ds.test[i].coatt_box));
  }
  cfg.tau = tau;
  echo_config(cfg, out);
  std::cout << eval::summary_text(report);
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& image_path, const Common& c) {
  RunConfig cfg = resolve_config(c);
  require_file(ckpt_path);
  require_file(image_path);
  const train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
  model::AttentionFlow net = train::restore_model(ckpt);
  const Image img = read_pnm(image_path);
  if (img.channels != 3) throw ParameterError("infer: expected an RGB (P6) image");
  const std::vector<Image> batch{img};
  const Image out_map = eval::predict(net, batch).front();
  const fs::path out = make_out_dir(c.out);
  write_pgm(out / "faces.pgm", out_map, 0);
  write_pgm(out / "coattention.pgm", out_map, 1);

  const double tau = cfg.tau.value_or(0.5);
  const double pk = eval::peak(out_map);
  std::ofstream os(out / "verdict.txt");
  char line[160];
  if (eval::detect(out_map, tau)) {
    const Point p = eval::localize(out_map, tau);
    std::snprintf(line, sizeof line, "joint attention at %.0f %.0f (peak %.6f, tau %.6f)\n", p.x, p.y, pk, tau);
  } else {
    std::snprintf(line, sizeof line, "no joint attention (peak %.6f, tau %.6f)\n", pk, tau);
  }
  os << line;
  std::cout << line;
  return 0;
}

int cmd_stats(const std::string& dataset_dir, const std::string& split) {
  const scene::Dataset ds = io::read_dataset(dataset_dir);
  std::vector<const scene::Scene*> scenes;
  auto add = [&](const std::vector<scene::Scene>& v) {
    for (const auto& s : v) scenes.push_back(&s);
  };
  if (split == "all" || split == "train") add(ds.train);
  if (split == "all" || split == "val") add(ds.val);
  if (split == "all" || split == "test") add(ds.test);
  std::vector<heatmap::CoattRecord> records;
  for (const auto* s : scenes) {
    if (s->coatt_box) records.push_back({s->image, *s->coatt_box});
  }
  if (records.empty()) throw ParameterError("stats: no scenes with joint attention");
  const double stat = heatmap::saliency_box_statistic(records);
  std::printf("%.6f\n", stat);
  return 0;
}

int exit_code_for(const char* category) {
  const std::string c(category);
  if (c == "config" || c == "usage") return 2;
  if (c == "io") return 3;
  if (c == "version") return 4;
  if (c == "format") return 5;
  if (c == "training") return 6;
  if (c == "parameter") return 7;
  return 1;
}

int fail(const char* category, const std::string& msg) {
  std::cerr << "error: " << category << ": " << msg << '\n';
  return exit_code_for(category);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint attention estimation on synthetic scenes"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool seed, bool tau) {
    sub->add_option("--config", common.config_path, "Run configuration file");
    sub->add_option("--out", common.out, "Output path");
    if (seed) sub->add_option("--seed", common.seed, "Seed override");
    if (tau) sub->add_option("--tau", common.tau, "Detection threshold in [0,1]");
  };

  std::string dataset_dir, image_path, ckpt_path, variant = "channel", targets_dir, resume_path,
      split = "all";
  std::size_t overlays = 8;

  auto* scenegen = app.add_subcommand("scenegen", "Generate a synthetic dataset");
  add_common(scenegen, true, false);

  auto* sal = app.add_subcommand("saliency", "Write the saliency map of a PPM image as PGM");
  sal->add_option("image", image_path, "Input PPM")->required();
  add_common(sal, false, false);

  auto* targets = app.add_subcommand("targets", "Build pseudo-attention targets for a dataset");
  targets->add_option("dataset", dataset_dir, "Dataset directory")->required();
  add_common(targets, false, false);

  auto* trn = app.add_subcommand("train", "Train a model variant");
  trn->add_option("dataset", dataset_dir, "Dataset directory")->required();
  trn->add_option("--variant", variant, "frozen, joint, finetune, channel or spatial");
  trn->add_option("--targets", targets_dir, "Directory written by the targets command");
  trn->add_option("--resume", resume_path, "Checkpoint to continue from");
  add_common(trn, true, false);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  ev->add_option("dataset", dataset_dir, "Dataset directory")->required();
  ev->add_option("--overlays", overlays, "Number of overlay images to write");
  add_common(ev, false, true);

  auto* inf = app.add_subcommand("infer", "Run a checkpoint on one image");
  inf->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  inf->add_option("image", image_path, "Input PPM")->required();
  add_common(inf, false, true);

  auto* st = app.add_subcommand("stats", "Fraction of co-attention boxes above mean saliency");
  st->add_option("dataset", dataset_dir, "Dataset directory")->required();
  st->add_option("--split", split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*scenegen) return cmd_scenegen(common);
    if (*sal) return cmd_saliency(image_path, common);
    if (*targets) return cmd_targets(dataset_dir, common);
    if (*trn) return cmd_train(dataset_dir, variant, targets_dir, resume_path, common);
    if (*ev) return cmd_eval(ckpt_path, dataset_dir, overlays, common);
    if (*inf) return cmd_infer(ckpt_path, image_path, common);
    if (*st) return cmd_stats(dataset_dir, split);
  } catch (const ConfigError& e) {
    return fail("config", e.what());
  } catch (const IoError& e) {
    return fail("io", e.what());
  } catch (const VersionError& e) {
    return fail("version", e.what());
  } catch (const FormatError& e) {
    return fail("format", e.what());
  } catch (const TrainingError& e) {
    return fail("training", e.what());
  } catch (const ParameterError& e) {
    return fail("parameter", e.what());
  } catch (const GenerationError& e) {
    return fail("generation", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 1;
}
