#include "attflow/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "attflow/errors.hpp"

namespace attflow::heatmap {

namespace {

void check_dims(const saliency::SaliencyMap& s) {
  if (s.values.channels != 1 || s.values.pixels.empty()) {
    throw ParameterError("heatmap: saliency map must be a non-empty single-channel map");
  }
}

double log_saliency(double s, double eps) { return std::log(std::clamp(s, eps, 1.0)); }

}  // namespace

BoxGaussian BoxGaussian::for_box(const BoundingBox& box) {
  return BoxGaussian{box, std::min(box.w, box.h) / 4.0};
}

double BoxGaussian::value(double px, double py) const {
  const Point c = box.center();
  const double dx = px - c.x, dy = py - c.y;
  if (std::abs(dx) > box.w || std::abs(dy) > box.h) return 0.0;
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

Image box_gaussian_map(const BoxGaussian& g, std::size_t height, std::size_t width) {
  if (!(g.sigma > 0.0)) throw ParameterError("box_gaussian_map: sigma must be positive");
  Image out(1, height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out.at(0, y, x) = g.value(double(x), double(y));
  return out;
}

void FusionParams::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("heatmap: alpha must be > 0");
  if (!(beta >= 0.0)) throw ConfigError("heatmap: beta must be >= 0");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("heatmap: epsilon must be in (0,1)");
  if (max_faces < 1) throw ConfigError("heatmap: max_faces must be >= 1");
}

NormalizationBounds NormalizationBounds::from(const FusionParams& p) {
  p.validate();
  return {(p.alpha + p.beta) * std::log(p.epsilon), p.alpha * std::log(double(p.max_faces))};
}

Image face_channel(std::span<const BoxGaussian> faces, const saliency::SaliencyMap& saliency,
                   const FusionParams& p) {
  p.validate();
  check_dims(saliency);
  const std::size_t H = saliency.height(), W = saliency.width();
  Image out(1, H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double sum = 0.0;
      for (const auto& f : faces) sum += f.value(double(x), double(y));
      out.at(0, y, x) = p.alpha * std::log(std::max(sum, p.epsilon)) +
                        p.beta * log_saliency(saliency.at(y, x), p.epsilon);
    }
  return out;
}

Image coatt_channel(const std::optional<BoxGaussian>& coatt, const saliency::SaliencyMap& saliency,
                    const FusionParams& p) {
  if (coatt) return face_channel(std::span<const BoxGaussian>(&*coatt, 1), saliency, p);
  return face_channel({}, saliency, p);
}

Image normalize_target(const Image& raw, const NormalizationBounds& bounds) {
  if (!(bounds.hi > bounds.lo)) throw ConfigError("normalize_target: hi must exceed lo");
  Image out = raw;
  const double span = bounds.hi - bounds.lo;
  for (auto& v : out.pixels) v = std::clamp((v - bounds.lo) / span, 0.0, 1.0);
  return out;
}

PseudoAttentionMaps build_targets(std::span<const BoundingBox> faces,
                                  const std::optional<BoundingBox>& coatt,
                                  const saliency::SaliencyMap& saliency, const FusionParams& p) {
  const auto bounds = NormalizationBounds::from(p);
  std::vector<BoxGaussian> face_g;
  for (const auto& b : faces) face_g.push_back(BoxGaussian::for_box(b));
  std::optional<BoxGaussian> coatt_g;
  if (coatt) coatt_g = BoxGaussian::for_box(*coatt);
  PseudoAttentionMaps maps;
  maps.h1 = normalize_target(face_channel(face_g, saliency, p), bounds);
  maps.h2 = normalize_target(coatt_channel(coatt_g, saliency, p), bounds);
  maps.alpha = p.alpha;
  maps.beta = p.beta;
  maps.epsilon = p.epsilon;
  return maps;
}

double saliency_box_statistic(std::span<const CoattRecord> dataset,
                              const SaliencyEstimator& estimator) {
  if (dataset.empty()) throw ParameterError("saliency_box_statistic: empty dataset");
  std::size_t above = 0;
  for (const auto& rec : dataset) {
    const auto s = estimator(rec.image);
    if (saliency::mean_in_box(s, rec.coatt) > saliency::mean_value(s)) ++above;
  }
  return double(above) / double(dataset.size());
}

}  // namespace attflow::heatmap
