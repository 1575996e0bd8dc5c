#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "attflow/box.hpp"
#include "attflow/image.hpp"

namespace attflow::scene {

struct Rgb {
  double r = 0, g = 0, b = 0;
};

struct SceneConfig {
  std::size_t height = 96;
  std::size_t width = 144;
  int min_faces = 0;
  int max_faces = 4;
  double joint_probability = 0.5;
  int min_distractors = 1;
  int max_distractors = 3;

  int face_radius = 6;
  int target_size = 11;
  int distractor_size = 11;
  double noise_amplitude = 0.03;
  Rgb background{0.22, 0.22, 0.24};
  Rgb face_color{0.95, 0.80, 0.66};
  Rgb gaze_color{0.10, 0.05, 0.05};
  Rgb target_color{0.95, 0.20, 0.90};
  Rgb distractor_color{0.30, 0.50, 0.85};

  std::size_t train_size = 500;
  std::size_t val_size = 100;
  std::size_t test_size = 100;
  std::uint64_t master_seed = 1;
  // Explicit per-split seed starts; split k uses seeds [start, start + size).
  std::optional<std::uint64_t> train_seed_start, val_seed_start, test_seed_start;

  int max_attempts = 500;

  void validate() const;
};

struct Scene {
  std::uint64_t seed = 0;
  Image image;  // 3 x H x W, values on the 8-bit grid
  std::vector<BoundingBox> face_boxes;
  std::vector<Point> gaze_directions;  // unit vectors, one per face
  std::optional<BoundingBox> coatt_box;
  std::vector<BoundingBox> distractor_boxes;
  bool has_joint_attention = false;

  bool operator==(const Scene&) const = default;
};

// Fully determined by (config, seed). Throws GenerationError when placement
// fails after config.max_attempts tries.
Scene generate_scene(const SceneConfig& config, std::uint64_t seed);

struct SeedRange {
  std::uint64_t start = 0, count = 0;
};

struct Dataset {
  std::vector<Scene> train, val, test;
};

// Seed ranges per split (train, val, test); throws ConfigError when they overlap.
std::vector<SeedRange> split_seed_ranges(const SceneConfig& config);
Dataset generate_dataset(const SceneConfig& config);

// Distance from p to the ray origin + t * dir, t >= 0.
double point_ray_distance(Point p, Point origin, Point dir);

}  // namespace attflow::scene
