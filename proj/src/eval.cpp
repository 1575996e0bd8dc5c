#include "attflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "attflow/errors.hpp"
#include "attflow/tape.hpp"
#include "attflow/train.hpp"

namespace attflow::eval {

namespace {

void check_output(const Image& output, const char* who) {
  if (output.channels != 2 || output.pixels.empty()) {
    throw ParameterError(std::string(who) + ": expected a non-empty 2-channel map");
  }
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double peak(const Image& output) {
  check_output(output, "peak");
  const auto p = output.plane(1);
  return *std::max_element(p.begin(), p.end());
}

bool detect(const Image& output, double tau) { return peak(output) > tau; }

Point argmax(const Image& output, std::size_t channel) {
  if (channel >= output.channels || output.pixels.empty()) {
    throw ParameterError("argmax: channel out of range");
  }
  const auto p = output.plane(channel);
  const std::size_t i = std::size_t(std::max_element(p.begin(), p.end()) - p.begin());
  return {double(i % output.width), double(i / output.width)};
}

Point localize(const Image& output, double tau) {
  if (!detect(output, tau)) throw ContractError("localize: no joint attention detected");
  return argmax(output, 1);
}

double l2_distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::vector<ScoredBox> propose_boxes(const Image& rgb, const saliency::SaliencyMap& sal,
                                     const ProposalConfig& cfg) {
  if (rgb.channels != 3) throw ParameterError("propose_boxes: expected an RGB image");
  if (sal.height() != rgb.height || sal.width() != rgb.width) {
    throw ParameterError("propose_boxes: saliency size differs from image");
  }
  const int H = int(rgb.height), W = int(rgb.width);
  std::vector<double> grad(std::size_t(H) * W, 0.0);
  auto px = [&](std::size_t c, int y, int x) {
    return rgb.at(c, std::size_t(std::clamp(y, 0, H - 1)), std::size_t(std::clamp(x, 0, W - 1)));
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double best = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double gx = (px(c, y - 1, x + 1) + 2 * px(c, y, x + 1) + px(c, y + 1, x + 1) -
                           px(c, y - 1, x - 1) - 2 * px(c, y, x - 1) - px(c, y + 1, x - 1)) / 8.0;
        const double gy = (px(c, y + 1, x - 1) + 2 * px(c, y + 1, x) + px(c, y + 1, x + 1) -
                           px(c, y - 1, x - 1) - 2 * px(c, y - 1, x) - px(c, y - 1, x + 1)) / 8.0;
        best = std::max(best, std::hypot(gx, gy));
      }
      grad[std::size_t(y) * W + x] = best;
    }

  std::vector<int> label(grad.size(), -1);
  std::vector<ScoredBox> out;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < grad.size(); ++start) {
    if (label[start] >= 0 || grad[start] <= cfg.gradient_threshold) continue;
    const int id = int(out.size());
    int x0 = W, y0 = H, x1 = -1, y1 = -1;
    double gsum = 0.0;
    std::size_t count = 0;
    stack.assign(1, start);
    label[start] = id;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const int y = int(i / W), x = int(i % W);
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
      gsum += grad[i];
      ++count;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
          const std::size_t j = std::size_t(ny) * W + nx;
          if (label[j] < 0 && grad[j] > cfg.gradient_threshold) {
            label[j] = id;
            stack.push_back(j);
          }
        }
    }
    ScoredBox sb;
    sb.box = {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
    sb.score = count >= cfg.min_pixels ? gsum / double(count) + saliency::mean_in_box(sal, sb.box) : -1.0;
    out.push_back(sb);
  }
  std::erase_if(out, [](const ScoredBox& b) { return b.score < 0.0; });
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  if (out.size() > cfg.max_proposals) out.resize(cfg.max_proposals);
  return out;
}

std::vector<std::size_t> nms(std::span<const BoundingBox> boxes, std::span<const double> scores,
                             double iou_threshold) {
  if (boxes.size() != scores.size()) throw ParameterError("nms: boxes and scores differ in length");
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw ParameterError("nms: iou_threshold must be in (0,1)");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return iou(boxes[i], boxes[k]) > iou_threshold;
    });
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

double gaussian_box_mass(Point p, const BoundingBox& b, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian_box_mass: sigma must be positive");
  auto axis = [&](double c, int lo, int len) {
    return normal_cdf((lo + len - 0.5 - c) / sigma) - normal_cdf((lo - 0.5 - c) / sigma);
  };
  return axis(p.x, b.x, b.w) * axis(p.y, b.y, b.h);
}

BoundingBox match_proposal(Point p, std::span<const BoundingBox> proposals, const MatchConfig& cfg) {
  if (proposals.empty()) {
    const int half = cfg.default_size / 2;
    return {int(std::lround(p.x)) - half, int(std::lround(p.y)) - half, cfg.default_size,
            cfg.default_size};
  }
  std::size_t best = 0;
  double best_mass = -1.0;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const double m = gaussian_box_mass(p, proposals[i], cfg.sigma);
    if (m > best_mass) {
      best_mass = m;
      best = i;
    }
  }
  return proposals[best];
}

std::vector<Image> predict(model::AttentionFlow& net, std::span<const Image> images,
                           std::size_t batch_size) {
  if (batch_size < 1) throw ParameterError("predict: batch_size must be >= 1");
  NoGradGuard guard;
  std::vector<Image> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, images.size() - start);
    const Image& first = images[start];
    std::vector<double> data;
    data.reserve(n * first.pixels.size());
    for (std::size_t i = 0; i < n; ++i) {
      const Image& img = images[start + i];
      if (img.channels != 3 || img.height != first.height || img.width != first.width) {
        throw ParameterError("predict: images must be RGB with a common size");
      }
      data.insert(data.end(), img.pixels.begin(), img.pixels.end());
    }
    const Tensor y =
        net.forward(Tensor({n, 3, first.height, first.width}, std::move(data)), model::Mode::Eval);
    const std::size_t per = 2 * first.height * first.width;
    auto v = y.data();
    for (std::size_t i = 0; i < n; ++i) {
      Image o(2, first.height, first.width);
      for (std::size_t k = 0; k < per; ++k) o.pixels[k] = std::clamp(v[i * per + k], 0.0, 1.0);
      out.push_back(std::move(o));
    }
  }
  return out;
}

EvalReport evaluate(std::span<const Image> predictions, std::span<const scene::Scene> scenes,
                    double tau, const EvalOptions& opt) {
  if (scenes.empty()) throw ParameterError("evaluate: empty split");
  if (predictions.size() != scenes.size()) {
    throw ParameterError("evaluate: prediction count differs from scene count");
  }
  EvalReport rep;
  rep.tau = tau;
  rep.frames.resize(scenes.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t ii = 0; ii < std::int64_t(scenes.size()); ++ii) {
    const std::size_t i = std::size_t(ii);
    try {
      const auto& s = scenes[i];
      const auto& out = predictions[i];
      FrameRecord r;
      r.index = i;
      r.seed = s.seed;
      r.peak = peak(out);
      r.detected = r.peak > tau;
      r.ground_truth = s.has_joint_attention;
      r.raw_point = argmax(out, 1);
      if (s.coatt_box) {
        const auto sal = saliency::compute_saliency(s.image);
        const auto proposals = propose_boxes(s.image, sal, opt.proposals);
        std::vector<BoundingBox> boxes;
        std::vector<double> scores;
        for (const auto& p : proposals) {
          boxes.push_back(p.box);
          scores.push_back(p.score);
        }
        std::vector<BoundingBox> kept;
        for (std::size_t k : nms(boxes, scores, opt.nms_iou)) kept.push_back(boxes[k]);
        r.matched = match_proposal(r.raw_point, kept, opt.match);
        r.gt_center = s.coatt_box->center();
        r.l2 = l2_distance(r.matched->center(), *r.gt_center);
        r.l2_raw = l2_distance(r.raw_point, *r.gt_center);
      }
      rep.frames[i] = r;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  std::size_t correct = 0;
  double l2 = 0.0, l2_raw = 0.0;
  for (const auto& r : rep.frames) {
    if (r.detected == r.ground_truth) ++correct;
    if (r.l2) {
      ++rep.positives;
      l2 += *r.l2;
      l2_raw += *r.l2_raw;
    }
  }
  rep.accuracy = double(correct) / double(rep.frames.size());
  if (rep.positives) {
    rep.mean_l2 = l2 / double(rep.positives);
    rep.mean_l2_raw = l2_raw / double(rep.positives);
  }
  return rep;
}

EvalReport evaluate(model::AttentionFlow& net, std::span<const scene::Scene> scenes, double tau,
                    const EvalOptions& options) {
  std::vector<Image> images;
  images.reserve(scenes.size());
  for (const auto& s : scenes) images.push_back(s.image);
  return evaluate(predict(net, images), scenes, tau, options);
}

DetectionThreshold calibrate_threshold(std::span<const double> peaks, std::span<const bool> labels) {
  if (peaks.size() != labels.size()) throw ParameterError("calibrate_threshold: size mismatch");
  const auto pos = std::count(labels.begin(), labels.end(), true);
  if (pos == 0 || pos == std::ptrdiff_t(labels.size())) {
    throw ParameterError("calibrate_threshold: split must contain both classes");
  }
  DetectionThreshold best{0.0, -1.0};
  for (int k = 0; k <= 100; ++k) {
    const double tau = k / 100.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < peaks.size(); ++i) correct += (peaks[i] > tau) == labels[i];
    const double acc = double(correct) / double(peaks.size());
    if (acc > best.accuracy) best = {tau, acc};
  }
  return best;
}

DetectionThreshold calibrate_threshold(model::AttentionFlow& net, std::span<const scene::Scene> scenes) {
  std::vector<Image> images;
  for (const auto& s : scenes) images.push_back(s.image);
  const auto preds = predict(net, images);
  std::vector<double> peaks;
  for (std::size_t i = 0; i < preds.size(); ++i) peaks.push_back(peak(preds[i]));
  std::unique_ptr<bool[]> labels(new bool[scenes.size()]);
  for (std::size_t i = 0; i < scenes.size(); ++i) labels[i] = scenes[i].has_joint_attention;
  return calibrate_threshold(peaks, std::span<const bool>(labels.get(), scenes.size()));
}

void write_report_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "index,seed,ground_truth,peak,detected,pred_x,pred_y,match_x,match_y,match_w,match_h,"
        "gt_x,gt_y,l2,l2_raw\n";
  for (const auto& r : rep.frames) {
    os << r.index << ',' << r.seed << ',' << int(r.ground_truth) << ',' << fmt(r.peak) << ','
       << int(r.detected) << ',' << r.raw_point.x << ',' << r.raw_point.y << ',';
    if (r.matched) {
      os << r.matched->x << ',' << r.matched->y << ',' << r.matched->w << ',' << r.matched->h << ','
         << r.gt_center->x << ',' << r.gt_center->y << ',' << fmt(*r.l2) << ',' << fmt(*r.l2_raw);
    } else {
      os << ",,,,,,,";
    }
    os << '\n';
  }
  if (!os) throw IoError("failed writing " + path);
}

std::string summary_text(const EvalReport& rep) {
  std::ostringstream os;
  os << "frames " << rep.frames.size() << '\n'
     << "positives " << rep.positives << '\n'
     << "tau " << fmt(rep.tau) << '\n'
     << "accuracy " << fmt(rep.accuracy) << '\n'
     << "mean_l2 " << fmt(rep.mean_l2) << '\n'
     << "mean_l2_raw " << fmt(rep.mean_l2_raw) << '\n';
  return os.str();
}

Image overlay(const Image& rgb, const Image& output, const FrameRecord& r,
              const std::optional<BoundingBox>& gt_box) {
  check_output(output, "overlay");
  if (rgb.channels != 3 || rgb.height != output.height || rgb.width != output.width) {
    throw ParameterError("overlay: image and output sizes differ");
  }
  Image o = rgb;
  for (std::size_t y = 0; y < o.height; ++y)
    for (std::size_t x = 0; x < o.width; ++x) {
      const double a = output.at(1, y, x);
      for (std::size_t c = 0; c < 3; ++c) {
        const double tint = c == 0 ? 1.0 : 0.0;
        o.at(c, y, x) = (1.0 - 0.6 * a) * o.at(c, y, x) + 0.6 * a * tint;
      }
    }
  auto outline = [&](const BoundingBox& b, double rr, double gg, double bb) {
    const auto c = b.clipped(int(o.width), int(o.height));
    if (!c) return;
    for (int y = c->y; y < c->y + c->h; ++y)
      for (int x = c->x; x < c->x + c->w; ++x) {
        if (y != c->y && y != c->y + c->h - 1 && x != c->x && x != c->x + c->w - 1) continue;
        o.at(0, y, x) = rr;
        o.at(1, y, x) = gg;
        o.at(2, y, x) = bb;
      }
  };
  if (gt_box) outline(*gt_box, 1.0, 1.0, 1.0);
  if (r.matched) outline(*r.matched, 0.1, 0.9, 0.1);
  return o;
}

}  // namespace attflow::eval
