#include "attflow/scene.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <random>
#include <string>

#include "attflow/errors.hpp"

namespace attflow::scene {

namespace {

constexpr double kObjectGap = 3.0;       // minimum free pixels between objects
constexpr double kMinGazeDistance = 20;  // face center to target center
constexpr double kRayClearance = 4.0;    // ungazed objects keep this margin from every ray

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(splitmix64(seed)) {}
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool chance(double p) { return real(0.0, 1.0) < p; }

 private:
  std::mt19937_64 rng_;
};

bool boxes_clear(const BoundingBox& a, const BoundingBox& b) {
  return a.x + a.w + kObjectGap <= b.x || b.x + b.w + kObjectGap <= a.x ||
         a.y + a.h + kObjectGap <= b.y || b.y + b.h + kObjectGap <= a.y;
}

double half_diagonal(const BoundingBox& b) { return 0.5 * std::hypot(double(b.w), double(b.h)); }

Point unit(double x, double y) {
  const double n = std::hypot(x, y);
  return {x / n, y / n};
}

struct Layout {
  std::vector<BoundingBox> occupied;

  bool free(const BoundingBox& b) const {
    return std::all_of(occupied.begin(), occupied.end(),
                       [&](const BoundingBox& o) { return boxes_clear(b, o); });
  }
};

// Square box of odd side `size` centered on an integer pixel, fully inside the image.
BoundingBox sample_square(Sampler& s, const SceneConfig& c, int size) {
  const int half = size / 2;
  const int cx = s.integer(half, int(c.width) - 1 - half);
  const int cy = s.integer(half, int(c.height) - 1 - half);
  return {cx - half, cy - half, size, size};
}

void fill_rect(Image& img, const BoundingBox& b, const Rgb& col) {
  const auto clip = b.clipped(int(img.width), int(img.height));
  if (!clip) return;
  for (int y = clip->y; y < clip->y + clip->h; ++y)
    for (int x = clip->x; x < clip->x + clip->w; ++x) {
      img.at(0, y, x) = col.r;
      img.at(1, y, x) = col.g;
      img.at(2, y, x) = col.b;
    }
}

void set_px(Image& img, int x, int y, const Rgb& col) {
  if (x < 0 || y < 0 || x >= int(img.width) || y >= int(img.height)) return;
  img.at(0, y, x) = col.r;
  img.at(1, y, x) = col.g;
  img.at(2, y, x) = col.b;
}

void draw_face(Image& img, const BoundingBox& box, Point gaze, const SceneConfig& c) {
  const int r = c.face_radius;
  const int cx = box.x + r, cy = box.y + r;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= r * r) set_px(img, cx + dx, cy + dy, c.face_color);
  // Gaze tick: a dark stroke from the center towards the gaze direction.
  for (double t = 0.0; t <= r - 0.5; t += 0.25) {
    set_px(img, int(std::lround(cx + t * gaze.x)), int(std::lround(cy + t * gaze.y)), c.gaze_color);
  }
}

}  // namespace

double point_ray_distance(Point p, Point origin, Point dir) {
  const double vx = p.x - origin.x, vy = p.y - origin.y;
  const double t = vx * dir.x + vy * dir.y;
  if (t <= 0.0) return std::hypot(vx, vy);
  return std::abs(vx * dir.y - vy * dir.x);
}

void SceneConfig::validate() const {
  if (height % 8 != 0 || width % 8 != 0 || height < 32 || width < 32) {
    throw ConfigError("scene: image dims must be multiples of 8 and at least 32");
  }
  if (!(joint_probability >= 0.0 && joint_probability <= 1.0)) {
    throw ConfigError("scene: joint_probability must be in [0,1]");
  }
  if (min_faces < 0 || max_faces < min_faces) throw ConfigError("scene: invalid face count range");
  if (min_distractors < 0 || max_distractors < min_distractors) {
    throw ConfigError("scene: invalid distractor count range");
  }
  if (face_radius < 2 || target_size < 3 || distractor_size < 3 || target_size % 2 == 0 ||
      distractor_size % 2 == 0) {
    throw ConfigError("scene: face_radius >= 2 and odd target/distractor sizes >= 3 required");
  }
  if (!(noise_amplitude >= 0.0)) throw ConfigError("scene: noise_amplitude must be >= 0");
  if (max_attempts < 1) throw ConfigError("scene: max_attempts must be >= 1");
}

Scene generate_scene(const SceneConfig& c, std::uint64_t seed) {
  c.validate();
  Sampler s(seed);
  Scene scene;
  scene.seed = seed;

  const bool joint_possible = c.max_faces >= 2;
  const bool joint = joint_possible && s.chance(c.joint_probability);
  const int n_faces = s.integer(joint ? std::max(2, c.min_faces) : c.min_faces, c.max_faces);
  const int n_gazing = joint ? s.integer(2, n_faces) : 0;
  const int n_distractors = s.integer(c.min_distractors, c.max_distractors);
  const int face_side = 2 * c.face_radius + 1;

  bool placed = false;
  std::string failure;
  for (int attempt = 0; attempt < c.max_attempts && !placed; ++attempt) {
    Layout layout;
    scene.face_boxes.clear();
    scene.gaze_directions.clear();
    scene.distractor_boxes.clear();
    scene.coatt_box.reset();

    std::optional<BoundingBox> target;
    if (joint) {
      target = sample_square(s, c, c.target_size);
      layout.occupied.push_back(*target);
    }

    bool ok = true;
    for (int i = 0; i < n_faces && ok; ++i) {
      const BoundingBox box = sample_square(s, c, face_side);
      const Point fc = box.center();
      if (!layout.free(box)) {
        ok = false;
        failure = "faces do not fit without overlap";
        break;
      }
      Point dir;
      if (i < n_gazing) {
        const Point tc = target->center();
        if (std::hypot(tc.x - fc.x, tc.y - fc.y) < kMinGazeDistance) {
          ok = false;
          failure = "gazing face too close to target";
          break;
        }
        dir = unit(tc.x - fc.x, tc.y - fc.y);
      } else {
        const double angle = s.real(0.0, 2.0 * std::numbers::pi);
        dir = {std::cos(angle), std::sin(angle)};
        if (target && point_ray_distance(target->center(), fc, dir) <
                          half_diagonal(*target) + kRayClearance) {
          ok = false;
          failure = "non-gazing face looks at the target";
          break;
        }
      }
      layout.occupied.push_back(box);
      scene.face_boxes.push_back(box);
      scene.gaze_directions.push_back(dir);
    }
    if (!ok) continue;

    for (int i = 0; i < n_distractors && ok; ++i) {
      const BoundingBox box = sample_square(s, c, c.distractor_size);
      if (!layout.free(box)) {
        ok = false;
        failure = "distractors do not fit without overlap";
        break;
      }
      for (std::size_t f = 0; f < scene.face_boxes.size(); ++f) {
        if (point_ray_distance(box.center(), scene.face_boxes[f].center(), scene.gaze_directions[f]) <
            half_diagonal(box) + kRayClearance) {
          ok = false;
          failure = "distractor lies on a gaze ray";
          break;
        }
      }
      if (!ok) break;
      layout.occupied.push_back(box);
      scene.distractor_boxes.push_back(box);
    }
    if (!ok) continue;

    scene.coatt_box = target;
    placed = true;
  }
  if (!placed) {
    throw GenerationError("scene " + std::to_string(seed) + ": placement failed after " +
                          std::to_string(c.max_attempts) + " attempts (" + failure + ")");
  }
  scene.has_joint_attention = scene.coatt_box.has_value();

  Image img(3, c.height, c.width);
  fill_rect(img, {0, 0, int(c.width), int(c.height)}, c.background);
  for (const auto& d : scene.distractor_boxes) fill_rect(img, d, c.distractor_color);
  if (scene.coatt_box) fill_rect(img, *scene.coatt_box, c.target_color);
  for (std::size_t f = 0; f < scene.face_boxes.size(); ++f)
    draw_face(img, scene.face_boxes[f], scene.gaze_directions[f], c);
  for (auto& v : img.pixels) v = std::clamp(v + s.real(-c.noise_amplitude, c.noise_amplitude), 0.0, 1.0);
  quantize_8bit(img);
  scene.image = std::move(img);
  return scene;
}

std::vector<SeedRange> split_seed_ranges(const SceneConfig& c) {
  if (c.train_size < 1 || c.val_size < 1 || c.test_size < 1) {
    throw ConfigError("scene: split sizes must be >= 1");
  }
  const std::uint64_t base = c.master_seed * 10'000'000ULL;
  const std::uint64_t train = c.train_seed_start.value_or(base);
  const std::uint64_t val = c.val_seed_start.value_or(train + c.train_size);
  const std::uint64_t test = c.test_seed_start.value_or(val + c.val_size);
  std::vector<SeedRange> ranges{{train, c.train_size}, {val, c.val_size}, {test, c.test_size}};
  for (std::size_t i = 0; i < ranges.size(); ++i)
    for (std::size_t j = i + 1; j < ranges.size(); ++j) {
      const auto& a = ranges[i];
      const auto& b = ranges[j];
      if (a.start < b.start + b.count && b.start < a.start + a.count) {
        throw ConfigError("scene: split seed ranges overlap");
      }
    }
  return ranges;
}

Dataset generate_dataset(const SceneConfig& c) {
  c.validate();
  const auto ranges = split_seed_ranges(c);
  Dataset ds;
  std::vector<Scene>* splits[3] = {&ds.train, &ds.val, &ds.test};
  for (std::size_t k = 0; k < 3; ++k) {
    auto& out = *splits[k];
    out.resize(ranges[k].count);
    std::exception_ptr error;
    std::mutex error_mutex;
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < std::int64_t(ranges[k].count); ++i) {
      try {
        out[std::size_t(i)] = generate_scene(c, ranges[k].start + std::uint64_t(i));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  }
  return ds;
}

}  // namespace attflow::scene
