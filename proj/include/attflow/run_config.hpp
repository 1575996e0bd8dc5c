#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attflow/eval.hpp"
#include "attflow/heatmap.hpp"
#include "attflow/model.hpp"
#include "attflow/scene.hpp"
#include "attflow/train.hpp"

namespace attflow {

// Everything a CLI run depends on besides its input files.
struct RunConfig {
  scene::SceneConfig scene;
  heatmap::FusionParams heatmap;
  model::ModelConfig model;
  train::TrainConfig train;
  eval::EvalOptions eval;
  std::optional<double> tau;  // fixed detection threshold; calibrated on val when unset
};

// Text format: "[section]" headers (scene, heatmap, model, train, eval) followed
// by "key = value" lines; '#' starts a comment. Unknown sections or keys, repeated
// keys and unparsable values raise ConfigError naming the line.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::string& path);
// Every key with its resolved value, in the format accepted by parse_run_config.
std::string format_run_config(const RunConfig& config);
// "section.key" names of every recognised key.
std::vector<std::string> run_config_keys();

}  // namespace attflow
