#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "attflow/box.hpp"
#include "attflow/image.hpp"
#include "attflow/saliency.hpp"

namespace attflow::heatmap {

// Isotropic Gaussian attached to a box: exp(-(dx^2+dy^2)/(2 sigma^2)) at offsets
// (dx, dy) from the box center, restricted to |dx| <= w and |dy| <= h, zero elsewhere.
struct BoxGaussian {
  BoundingBox box;
  double sigma = 1.0;

  // sigma = min(w, h) / 4
  static BoxGaussian for_box(const BoundingBox& box);
  double value(double px, double py) const;
};

Image box_gaussian_map(const BoxGaussian& g, std::size_t height, std::size_t width);

struct FusionParams {
  double alpha = 1.0;
  double beta = 0.3;
  double epsilon = 1e-3;
  int max_faces = 4;  // bounds the summed face Gaussians when normalizing

  void validate() const;
};

// Dataset-wide affine constants: lo = (alpha + beta) ln(eps), hi = alpha ln(max_faces).
struct NormalizationBounds {
  double lo = 0.0, hi = 1.0;
  static NormalizationBounds from(const FusionParams& p);
};

// Raw (log-domain) channels:
//   alpha ln(max(sum_i G_fi, eps)) + beta ln(clamp(S, eps, 1))
Image face_channel(std::span<const BoxGaussian> faces, const saliency::SaliencyMap& saliency,
                   const FusionParams& p);
//   alpha ln(max(G_coatt, eps)) + beta ln(clamp(S, eps, 1)); without a box the
//   Gaussian term is alpha ln(eps) everywhere.
Image coatt_channel(const std::optional<BoxGaussian>& coatt, const saliency::SaliencyMap& saliency,
                    const FusionParams& p);

// (raw - lo) / (hi - lo) clipped to [0,1]. Throws ConfigError when hi <= lo.
Image normalize_target(const Image& raw, const NormalizationBounds& bounds);

struct PseudoAttentionMaps {
  Image h1;  // faces
  Image h2;  // co-attention
  double alpha = 0.0, beta = 0.0, epsilon = 0.0;
};

PseudoAttentionMaps build_targets(std::span<const BoundingBox> faces,
                                  const std::optional<BoundingBox>& coatt,
                                  const saliency::SaliencyMap& saliency, const FusionParams& p);

struct CoattRecord {
  Image image;
  BoundingBox coatt;
};

using SaliencyEstimator = std::function<saliency::SaliencyMap(const Image&)>;

// Fraction of records whose mean saliency inside the co-attention box is
// strictly above the image's mean saliency.
double saliency_box_statistic(std::span<const CoattRecord> dataset,
                              const SaliencyEstimator& estimator = saliency::compute_saliency);

}  // namespace attflow::heatmap
