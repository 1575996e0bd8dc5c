#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "attflow/dataset_io.hpp"
#include "attflow/scene.hpp"
#include "doctest.h"

using namespace attflow;
namespace fs = std::filesystem;

namespace {

const fs::path kCli = ATTFLOW_CLI_PATH;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("attflow_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::string& args, const fs::path& dir) {
  const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = "ATTFLOW_LOG=0 " + kCli.string() + " " + args + " >" + o.string() + " 2>" + e.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
}

// Small scenes and model so the whole chain runs in seconds.
const char* kTinyConfig =
    "[scene]\nheight = 48\nwidth = 64\nmax_faces = 3\nface_radius = 4\ntarget_size = 7\n"
    "distractor_size = 7\nmax_distractors = 1\ntrain_size = 16\nval_size = 8\ntest_size = 8\n"
    "[model]\nencoder_widths = 4,6,8,8\nencoder_blocks = 0,1,0,0\ngenerator_blocks = 2\n"
    "generator_width = 8\nspatial_channels = 8\nspatial_bottleneck = 4\n"
    "[train]\nbatch_size = 4\nepochs = 2\ncalibration_batches = 2\n";

}  // namespace

TEST_CASE("distinct exit codes per error category") {
  const auto dir = scratch("errors");
  Run r = run("stats " + (dir / "missing").string(), dir);
  CHECK(r.code == 3);
  CHECK(r.err.rfind("error: io:", 0) == 0);

  write_text(dir / "bad.ini", "[scene]\nwidth = wide\n");
  r = run("scenegen --config " + (dir / "bad.ini").string() + " --out " + (dir / "x").string(), dir);
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: config:", 0) == 0);

  write_text(dir / "bad.ppm", "P6\n4 4\n255\nxx");
  r = run("saliency " + (dir / "bad.ppm").string() + " --out " + (dir / "s.pgm").string(), dir);
  CHECK(r.code == 5);

  // A checkpoint whose version field is bumped.
  write_text(dir / "tiny.ini", kTinyConfig);
  REQUIRE(run("scenegen --config " + (dir / "tiny.ini").string() + " --out " + (dir / "ds").string(), dir).code == 0);
  REQUIRE(run("train " + (dir / "ds").string() + " --config " + (dir / "tiny.ini").string() + " --variant frozen --out " +
                  (dir / "run").string(),
              dir)
              .code == 0);
  std::string bytes = slurp(dir / "run" / "checkpoint.bin");
  bytes[8] = char(bytes[8] + 1);
  write_text(dir / "v.bin", bytes);
  r = run("eval " + (dir / "v.bin").string() + " " + (dir / "ds").string() + " --out " + (dir / "e").string(), dir);
  CHECK(r.code == 4);
  CHECK(r.err.find('\n') == r.err.size() - 1);

  r = run("train " + (dir / "ds").string() + " --variant nonsense --out " + (dir / "r2").string(), dir);
  CHECK(r.code == 2);
}

TEST_CASE("infer on a blank image reports no joint attention") {
  const auto dir = scratch("infer");
  write_text(dir / "tiny.ini", kTinyConfig);
  REQUIRE(run("scenegen --config " + (dir / "tiny.ini").string() + " --out " + (dir / "ds").string(), dir).code == 0);
  REQUIRE(run("train " + (dir / "ds").string() + " --config " + (dir / "tiny.ini").string() + " --out " +
                  (dir / "run").string(),
              dir)
              .code == 0);
  Image blank(3, 48, 64, 0.0);
  write_ppm(dir / "blank.ppm", blank);
  const Run r = run("infer " + (dir / "run" / "checkpoint.bin").string() + " " + (dir / "blank.ppm").string() +
                        " --tau 0.5 --out " + (dir / "inf").string(),
                    dir);
  REQUIRE(r.code == 0);
  const std::string verdict = slurp(dir / "inf" / "verdict.txt");
  CHECK(verdict.rfind("no joint attention", 0) == 0);
  CHECK(fs::exists(dir / "inf" / "faces.pgm"));
  CHECK(fs::exists(dir / "inf" / "coattention.pgm"));
}

TEST_CASE("stats on the two-scene fixture prints one half") {
  const auto dir = scratch("stats");
  auto make = [](int cx, int cy) {
    Image img(3, 64, 96, 0.1);
    for (std::size_t c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 96; ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= 36) img.at(c, std::size_t(y), std::size_t(x)) = 0.9;
    return img;
  };
  scene::Dataset ds;
  for (auto [cx, cy] : {std::pair{26, 26}, std::pair{75, 45}}) {
    scene::Scene s;
    s.seed = ds.train.size();
    s.image = make(cx, cy);
    s.coatt_box = BoundingBox{20, 20, 12, 12};
    s.has_joint_attention = true;
    ds.train.push_back(s);
  }
  ds.val = {ds.train[0]};
  ds.test = {ds.train[1]};
  io::write_dataset(dir / "ds", ds);
  const Run r = run("stats " + (dir / "ds").string() + " --split train", dir);
  REQUIRE(r.code == 0);
  CHECK(r.out == "0.500000\n");
}

TEST_CASE("scenegen, targets, train and eval are deterministic") {
  const auto dir = scratch("chain");
  write_text(dir / "tiny.ini", kTinyConfig);
  std::string summaries[2], checkpoints[2];
  for (int k = 0; k < 2; ++k) {
    const fs::path root = dir / ("run" + std::to_string(k));
    const std::string cfg = " --config " + (dir / "tiny.ini").string();
    REQUIRE(run("scenegen" + cfg + " --seed 5 --out " + (root / "ds").string(), dir).code == 0);
    REQUIRE(run("targets " + (root / "ds").string() + cfg + " --out " + (root / "tg").string(), dir).code == 0);
    REQUIRE(run("train " + (root / "ds").string() + cfg + " --variant channel --seed 5 --targets " +
                    (root / "tg").string() + " --out " + (root / "tr").string(),
                dir)
                .code == 0);
    const Run e = run("eval " + (root / "tr" / "checkpoint.bin").string() + " " + (root / "ds").string() + cfg +
                          " --out " + (root / "ev").string(),
                      dir);
    REQUIRE(e.code == 0);
    summaries[k] = slurp(root / "ev" / "summary.txt");
    checkpoints[k] = slurp(root / "tr" / "checkpoint.bin");
    CHECK(fs::exists(root / "ev" / "report.csv"));
    CHECK(fs::exists(root / "tr" / "loss.csv"));
    CHECK(fs::exists(root / "tr" / "config.ini"));
  }
  CHECK_FALSE(summaries[0].empty());
  CHECK(summaries[0] == summaries[1]);
  CHECK(checkpoints[0] == checkpoints[1]);
  CHECK(slurp(dir / "run0" / "ds" / "manifest.txt") == slurp(dir / "run1" / "ds" / "manifest.txt"));
}
