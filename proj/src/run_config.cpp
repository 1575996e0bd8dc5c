#include "attflow/run_config.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "attflow/errors.hpp"

namespace attflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

// Value codecs. parse() returns false on malformed text.
template <class T>
struct Codec {
  static bool parse(const std::string& s, T& out) { return parse_number(s, out); }
  static std::string format(const T& v) {
    if constexpr (std::is_floating_point_v<T>) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return buf;
    } else {
      return std::to_string(v);
    }
  }
};

template <class T>
struct Codec<std::optional<T>> {
  static bool parse(const std::string& s, std::optional<T>& out) {
    if (s == "none") {
      out.reset();
      return true;
    }
    T v{};
    if (!Codec<T>::parse(s, v)) return false;
    out = v;
    return true;
  }
  static std::string format(const std::optional<T>& v) { return v ? Codec<T>::format(*v) : "none"; }
};

template <>
struct Codec<bool> {
  static bool parse(const std::string& s, bool& out) {
    if (s == "true" || s == "1") out = true;
    else if (s == "false" || s == "0") out = false;
    else return false;
    return true;
  }
  static std::string format(bool v) { return v ? "true" : "false"; }
};

template <class T, std::size_t N>
struct Codec<std::array<T, N>> {
  static bool parse(const std::string& s, std::array<T, N>& out) {
    std::array<T, N> tmp{};
    std::size_t k = 0, start = 0;
    while (true) {
      const auto comma = s.find(',', start);
      const std::string item = trim(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (k == N || !Codec<T>::parse(item, tmp[k])) return false;
      ++k;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (k != N) return false;
    out = tmp;
    return true;
  }
  static std::string format(const std::array<T, N>& v) {
    std::string s;
    for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + Codec<T>::format(v[i]);
    return s;
  }
};

struct Field {
  std::string section, key;
  std::function<bool(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Access>
Field field(std::string section, std::string key, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  return Field{std::move(section), std::move(key),
               [access](RunConfig& c, const std::string& v) { return Codec<T>::parse(v, access(c)); },
               [access](const RunConfig& c) {
                 RunConfig copy = c;
                 return Codec<T>::format(access(copy));
               }};
}

#define ATTFLOW_FIELD(section, key, expr) \
  field(section, key, [](RunConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      ATTFLOW_FIELD("scene", "height", c.scene.height),
      ATTFLOW_FIELD("scene", "width", c.scene.width),
      ATTFLOW_FIELD("scene", "min_faces", c.scene.min_faces),
      ATTFLOW_FIELD("scene", "max_faces", c.scene.max_faces),
      ATTFLOW_FIELD("scene", "joint_probability", c.scene.joint_probability),
      ATTFLOW_FIELD("scene", "min_distractors", c.scene.min_distractors),
      ATTFLOW_FIELD("scene", "max_distractors", c.scene.max_distractors),
      ATTFLOW_FIELD("scene", "face_radius", c.scene.face_radius),
      ATTFLOW_FIELD("scene", "target_size", c.scene.target_size),
      ATTFLOW_FIELD("scene", "distractor_size", c.scene.distractor_size),
      ATTFLOW_FIELD("scene", "noise_amplitude", c.scene.noise_amplitude),
      ATTFLOW_FIELD("scene", "train_size", c.scene.train_size),
      ATTFLOW_FIELD("scene", "val_size", c.scene.val_size),
      ATTFLOW_FIELD("scene", "test_size", c.scene.test_size),
      ATTFLOW_FIELD("scene", "master_seed", c.scene.master_seed),
      ATTFLOW_FIELD("scene", "train_seed_start", c.scene.train_seed_start),
      ATTFLOW_FIELD("scene", "val_seed_start", c.scene.val_seed_start),
      ATTFLOW_FIELD("scene", "test_seed_start", c.scene.test_seed_start),
      ATTFLOW_FIELD("scene", "max_attempts", c.scene.max_attempts),

      ATTFLOW_FIELD("heatmap", "alpha", c.heatmap.alpha),
      ATTFLOW_FIELD("heatmap", "beta", c.heatmap.beta),
      ATTFLOW_FIELD("heatmap", "epsilon", c.heatmap.epsilon),
      ATTFLOW_FIELD("heatmap", "max_faces", c.heatmap.max_faces),

      ATTFLOW_FIELD("model", "encoder_widths", c.model.encoder.widths),
      ATTFLOW_FIELD("model", "encoder_blocks", c.model.encoder.blocks),
      ATTFLOW_FIELD("model", "encoder_dilation", c.model.encoder.dilation),
      ATTFLOW_FIELD("model", "generator_blocks", c.model.generator.residual_blocks),
      ATTFLOW_FIELD("model", "generator_width", c.model.generator.width),
      ATTFLOW_FIELD("model", "zero_init_output", c.model.generator.zero_init_output),
      ATTFLOW_FIELD("model", "channel_pool_grid", c.model.channel.pool_grid),
      ATTFLOW_FIELD("model", "channel_mid", c.model.channel.mid_channels),
      ATTFLOW_FIELD("model", "spatial_channels", c.model.spatial.channels),
      ATTFLOW_FIELD("model", "spatial_bottleneck", c.model.spatial.bottleneck_channels),
      ATTFLOW_FIELD("model", "upsample", c.model.upsample),

      ATTFLOW_FIELD("train", "learning_rate", c.train.learning_rate),
      ATTFLOW_FIELD("train", "momentum", c.train.momentum),
      ATTFLOW_FIELD("train", "batch_size", c.train.batch_size),
      ATTFLOW_FIELD("train", "epochs", c.train.epochs),
      ATTFLOW_FIELD("train", "seed", c.train.seed),
      ATTFLOW_FIELD("train", "calibration_batches", c.train.calibration_batches),

      ATTFLOW_FIELD("eval", "tau", c.tau),
      ATTFLOW_FIELD("eval", "nms_iou", c.eval.nms_iou),
      ATTFLOW_FIELD("eval", "gradient_threshold", c.eval.proposals.gradient_threshold),
      ATTFLOW_FIELD("eval", "min_pixels", c.eval.proposals.min_pixels),
      ATTFLOW_FIELD("eval", "max_proposals", c.eval.proposals.max_proposals),
      ATTFLOW_FIELD("eval", "match_sigma", c.eval.match.sigma),
      ATTFLOW_FIELD("eval", "default_box", c.eval.match.default_size),
  };
  return table;
}

#undef ATTFLOW_FIELD

}  // namespace

RunConfig parse_run_config(const std::string& text, RunConfig cfg) {
  std::istringstream is(text);
  std::string line, section;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError("config line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : fields()) known |= f.section == section;
      if (!known) fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    if (section.empty()) fail("key outside of a section");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const Field* match = nullptr;
    for (const auto& f : fields())
      if (f.section == section && f.key == key) match = &f;
    if (!match) fail("unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second) fail("repeated key '" + key + "'");
    if (!match->set(cfg, value)) fail("invalid value '" + value + "' for " + section + "." + key);
  }
  cfg.scene.validate();
  cfg.heatmap.validate();
  cfg.model.encoder.validate();
  cfg.train.validate();
  if (cfg.tau && !(*cfg.tau >= 0.0 && *cfg.tau <= 1.0)) throw ConfigError("eval.tau must be in [0,1]");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.section + "." + f.key);
  return keys;
}

}  // namespace attflow
