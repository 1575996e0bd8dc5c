#include <filesystem>
#include <fstream>
#include <random>

#include "attflow/dataset_io.hpp"
#include "attflow/errors.hpp"
#include "attflow/run_config.hpp"
#include "doctest.h"

using namespace attflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("attflow_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_CASE("PNM round trip") {
  const auto dir = scratch("pnm");
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> byte(0, 255);
  Image rgb(3, 7, 9);
  for (auto& v : rgb.pixels) v = byte(rng) / 255.0;
  write_ppm(dir / "a.ppm", rgb);
  CHECK(read_pnm(dir / "a.ppm") == rgb);

  Image gray(1, 5, 4);
  for (auto& v : gray.pixels) v = byte(rng) / 255.0;
  write_pgm(dir / "g.pgm", gray);
  CHECK(read_pnm(dir / "g.pgm") == gray);

  Image q(1, 1, 3);
  q.pixels = {-0.5, 0.5, 2.0};
  quantize_8bit(q);
  CHECK(q.pixels == std::vector<double>{0.0, 128 / 255.0, 1.0});

  CHECK_THROWS_AS(read_pnm(dir / "missing.ppm"), IoError);
  write_text(dir / "bad.ppm", "P6\n4 4\n255\nxx");
  CHECK_THROWS_AS(read_pnm(dir / "bad.ppm"), FormatError);
  write_text(dir / "bad2.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_pnm(dir / "bad2.ppm"), FormatError);
}

TEST_CASE("dataset round trip") {
  const auto dir = scratch("dataset");
  scene::SceneConfig cfg;
  cfg.train_size = 6;
  cfg.val_size = 3;
  cfg.test_size = 4;
  const auto ds = scene::generate_dataset(cfg);
  io::write_dataset(dir / "ds", ds);
  const auto back = io::read_dataset(dir / "ds");
  CHECK(back.train == ds.train);
  CHECK(back.val == ds.val);
  CHECK(back.test == ds.test);

  CHECK_THROWS_AS(io::read_dataset(dir / "nope"), IoError);
  write_text(dir / "ds" / "manifest.txt", "attflow-dataset 9\n");
  CHECK_THROWS_AS(io::read_dataset(dir / "ds"), VersionError);
  write_text(dir / "ds" / "manifest.txt", "something else\n");
  CHECK_THROWS_AS(io::read_dataset(dir / "ds"), FormatError);
}

TEST_CASE("target file round trip and corruption") {
  const auto dir = scratch("targets");
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Image> maps(3, Image(2, 8, 16));
  for (auto& m : maps)
    for (auto& v : m.pixels) v = u(rng);
  io::write_targets(dir / "t.tgt", maps);
  CHECK(io::read_targets(dir / "t.tgt") == maps);

  std::ifstream is(dir / "t.tgt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  write_text(dir / "short.tgt", bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(io::read_targets(dir / "short.tgt"), FormatError);
  std::string v2 = bytes;
  v2[8] = 2;
  write_text(dir / "v2.tgt", v2);
  CHECK_THROWS_AS(io::read_targets(dir / "v2.tgt"), VersionError);
}

TEST_CASE("run config parsing") {
  const RunConfig c = parse_run_config(
      "# comment\n[scene]\ntrain_size = 12  # trailing\nmaster_seed=9\n\n[model]\n"
      "encoder_widths = 4, 4, 8, 8\nzero_init_output = false\n[train]\nmomentum = 0\n"
      "[eval]\ntau = 0.35\n");
  CHECK(c.scene.train_size == 12);
  CHECK(c.scene.master_seed == 9);
  CHECK(c.model.encoder.widths == std::array<std::size_t, 4>{4, 4, 8, 8});
  CHECK_FALSE(c.model.generator.zero_init_output);
  CHECK(c.train.momentum == 0.0);
  CHECK(c.tau == 0.35);
  CHECK_FALSE(parse_run_config("").tau.has_value());

  CHECK_THROWS_AS(parse_run_config("[scene]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[nowhere]\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[scene]\ntrain_size = 1\ntrain_size = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[scene]\ntrain_size = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("train_size = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model]\nencoder_widths = 1,2,3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[eval]\ntau = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[train]\nmomentum = 1\n"), ConfigError);
  try {
    parse_run_config("[scene]\n\nwidth = 100x\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("formatted run config parses back to itself") {
  RunConfig c;
  c.scene.val_seed_start = 77;
  c.train.learning_rate = 0.0123456789;
  c.tau = 0.5;
  const std::string text = format_run_config(c);
  const RunConfig back = parse_run_config(text);
  CHECK(format_run_config(back) == text);
  CHECK(back.scene.val_seed_start == 77);
  CHECK(back.train.learning_rate == c.train.learning_rate);
  // Every documented key appears exactly once.
  for (const auto& key : run_config_keys()) {
    const auto name = key.substr(key.find('.') + 1);
    CHECK(text.find("\n" + name + " = ") != std::string::npos);
  }
}

TEST_CASE("load_run_config reports missing files") {
  CHECK_THROWS_AS(load_run_config("/nonexistent/attflow.ini"), IoError);
}
