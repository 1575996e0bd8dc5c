#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attflow/box.hpp"
#include "attflow/image.hpp"
#include "attflow/model.hpp"
#include "attflow/saliency.hpp"
#include "attflow/scene.hpp"

namespace attflow::eval {

// `output` below is a 2-channel map (faces, co-attention) at input resolution.

double peak(const Image& output);  // max of the co-attention channel
// True iff the co-attention peak exceeds tau.
bool detect(const Image& output, double tau);
// Row-major first argmax of one channel.
Point argmax(const Image& output, std::size_t channel = 1);
// Argmax of the co-attention channel; throws ContractError when detect(output, tau) is false.
Point localize(const Image& output, double tau);
double l2_distance(Point a, Point b);

struct ScoredBox {
  BoundingBox box;
  double score = 0.0;
};

struct ProposalConfig {
  double gradient_threshold = 0.08;  // Sobel magnitude (per-channel max, kernel sum 1)
  std::size_t min_pixels = 4;        // smaller components are dropped
  std::size_t max_proposals = 64;
};

// Bounding boxes of 8-connected components of the thresholded colour-gradient
// magnitude, scored by mean gradient over the component plus mean saliency in
// the box. Highest scores first; ties keep component discovery order.
std::vector<ScoredBox> propose_boxes(const Image& rgb, const saliency::SaliencyMap& saliency,
                                     const ProposalConfig& config = {});

// Greedy suppression: visit boxes by descending score (ties by input order) and
// keep a box unless its IoU with an already kept box exceeds iou_threshold.
// Returns kept indices in visiting order.
std::vector<std::size_t> nms(std::span<const BoundingBox> boxes, std::span<const double> scores,
                             double iou_threshold);

struct MatchConfig {
  double sigma = 4.0;      // spread of the Gaussian placed at the predicted point
  int default_size = 11;   // side of the fallback box when there are no proposals
};

// Gaussian mass (sigma, centered at p) falling on the pixels of box.
double gaussian_box_mass(Point p, const BoundingBox& box, double sigma);
// Proposal with the largest Gaussian mass around p (first on ties); a
// default_size square centered at round(p) when proposals is empty.
BoundingBox match_proposal(Point p, std::span<const BoundingBox> proposals,
                           const MatchConfig& config = {});

struct FrameRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double peak = 0.0;
  bool ground_truth = false;
  bool detected = false;
  Point raw_point;                    // co-attention argmax
  std::optional<BoundingBox> matched; // proposal matched to raw_point
  std::optional<Point> gt_center;
  std::optional<double> l2;           // matched-box center vs gt center
  std::optional<double> l2_raw;       // raw_point vs gt center
};

struct EvalReport {
  double tau = 0.0;
  double accuracy = 0.0;
  std::size_t positives = 0;  // frames with ground-truth joint attention
  double mean_l2 = 0.0;       // over positive frames; 0 when there are none
  double mean_l2_raw = 0.0;
  std::vector<FrameRecord> frames;
};

struct EvalOptions {
  double nms_iou = 0.5;
  ProposalConfig proposals;
  MatchConfig match;
};

// Model outputs for each image, clipped to [0,1]. Runs in eval mode without
// recording gradients.
std::vector<Image> predict(model::AttentionFlow& net, std::span<const Image> images,
                           std::size_t batch_size = 8);

// L2 is measured on every frame with ground-truth joint attention, whatever the
// detection verdict. Throws ParameterError on an empty or mismatched split.
EvalReport evaluate(std::span<const Image> predictions, std::span<const scene::Scene> scenes,
                    double tau, const EvalOptions& options = {});
EvalReport evaluate(model::AttentionFlow& net, std::span<const scene::Scene> scenes, double tau,
                    const EvalOptions& options = {});

struct DetectionThreshold {
  double tau = 0.5;
  double accuracy = 0.0;
};

// Best of tau = k/100, k = 0..100 (smallest on ties). Throws ParameterError
// unless both classes are present.
DetectionThreshold calibrate_threshold(std::span<const double> peaks, std::span<const bool> labels);
DetectionThreshold calibrate_threshold(model::AttentionFlow& net, std::span<const scene::Scene> scenes);

void write_report_csv(const EvalReport& report, const std::string& path);
std::string summary_text(const EvalReport& report);
// Source image with the co-attention map tinted red, the matched box in green
// and the ground-truth box in white.
Image overlay(const Image& rgb, const Image& output, const FrameRecord& record,
              const std::optional<BoundingBox>& gt_box);

}  // namespace attflow::eval
