#include "attflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "attflow/errors.hpp"
#include "attflow/saliency.hpp"
#include "attflow/tape.hpp"

namespace attflow::train {

using model::ParamGroup;
using model::Variant;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning_rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0,1)");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
}

double encoder_learning_rate(Variant variant, double learning_rate) {
  switch (variant) {
    case Variant::EncoderFrozen:
    case Variant::ChannelAttention: return 0.0;
    case Variant::EncoderJoint: return learning_rate;
    case Variant::EncoderFinetune:
    case Variant::SpatialAttention: return learning_rate / 10.0;
  }
  return 0.0;
}

LrMap learning_rates(Variant variant, double learning_rate) {
  return {{ParamGroup::Encoder, encoder_learning_rate(variant, learning_rate)},
          {ParamGroup::Generator, learning_rate},
          {ParamGroup::ChannelAttention, learning_rate},
          {ParamGroup::SpatialAttention, learning_rate}};
}

Example make_example(const scene::Scene& s, const heatmap::FusionParams& fusion) {
  const auto sal = saliency::compute_saliency(s.image);
  const auto maps = heatmap::build_targets(s.face_boxes, s.coatt_box, sal, fusion);
  Example ex;
  ex.image = s.image;
  ex.target = Image(2, s.image.height, s.image.width);
  std::copy(maps.h1.pixels.begin(), maps.h1.pixels.end(), ex.target.plane(0).begin());
  std::copy(maps.h2.pixels.begin(), maps.h2.pixels.end(), ex.target.plane(1).begin());
  return ex;
}

std::vector<Example> make_examples(std::span<const scene::Scene> scenes,
                                   const heatmap::FusionParams& fusion) {
  fusion.validate();
  std::vector<Example> out(scenes.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < std::int64_t(scenes.size()); ++i) {
    out[std::size_t(i)] = make_example(scenes[std::size_t(i)], fusion);
  }
  return out;
}

namespace {

Tensor stack(std::span<const Image* const> imgs) {
  if (imgs.empty()) throw ParameterError("stack: empty batch");
  const Image& first = *imgs[0];
  std::vector<double> data;
  data.reserve(imgs.size() * first.pixels.size());
  for (const Image* img : imgs) {
    if (img->channels != first.channels || img->height != first.height || img->width != first.width) {
      throw ParameterError("stack: images in a batch must share dimensions");
    }
    data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor({imgs.size(), first.channels, first.height, first.width}, std::move(data));
}

template <class Field>
Tensor stack_field(std::span<const Example> ex, std::span<const std::size_t> idx, Field f) {
  std::vector<const Image*> imgs;
  for (std::size_t i : idx) {
    if (i >= ex.size()) throw ParameterError("stack: index out of range");
    imgs.push_back(&(ex[i].*f));
  }
  return stack(imgs);
}

// Concatenates [1,...] slices along the batch axis.
Tensor stack_tensors(const std::vector<Tensor>& items, std::span<const std::size_t> idx) {
  Shape shape = items[idx[0]].shape();
  const std::size_t per = items[idx[0]].numel();
  std::vector<double> data;
  data.reserve(per * idx.size());
  for (std::size_t i : idx) {
    auto d = items[i].data();
    data.insert(data.end(), d.begin(), d.end());
  }
  shape[0] = idx.size();
  return Tensor(std::move(shape), std::move(data));
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw FormatError("checkpoint: unreadable RNG state", 0);
  return rng;
}

constexpr std::uint64_t kShuffleSalt = 0x5eed5eed5eedULL;

}  // namespace

Tensor stack_images(std::span<const Example> examples, std::span<const std::size_t> indices) {
  return stack_field(examples, indices, &Example::image);
}

Tensor stack_targets(std::span<const Example> examples, std::span<const std::size_t> indices) {
  return stack_field(examples, indices, &Example::target);
}

Tensor image_to_tensor(const Image& img) {
  return Tensor({1, img.channels, img.height, img.width}, img.pixels);
}

Tensor loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ParameterError("loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  return ops::mse_loss(pred, target);
}

void sgd_step(std::vector<model::NamedParam>& params, const LrMap& lr) {
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    const auto it = lr.find(p.group);
    const double rate = it == lr.end() ? 0.0 : it->second;
    if (rate == 0.0) continue;
    if (!p.tensor.has_grad()) {
      throw ContractError("sgd_step: trainable parameter '" + p.name + "' has no gradient");
    }
    auto w = p.tensor.data();
    auto g = std::as_const(p.tensor).grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= rate * g[i];
  }
}

void sgd_step(std::vector<model::NamedParam>& params, const LrMap& lr, MomentumState& state) {
  if (state.momentum == 0.0) return sgd_step(params, lr);
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    const auto it = lr.find(p.group);
    const double rate = it == lr.end() ? 0.0 : it->second;
    if (rate == 0.0) continue;
    if (!p.tensor.has_grad()) {
      throw ContractError("sgd_step: trainable parameter '" + p.name + "' has no gradient");
    }
    auto& v = state.velocity[p.name];
    auto w = p.tensor.data();
    auto g = std::as_const(p.tensor).grad();
    if (v.empty()) v.assign(g.begin(), g.end());
    else
      for (std::size_t i = 0; i < w.size(); ++i) v[i] = state.momentum * v[i] + g[i];
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= rate * v[i];
  }
}

bool Checkpoint::operator==(const Checkpoint& o) const {
  if (variant != o.variant || seed != o.seed || epoch != o.epoch || step != o.step ||
      rng_state != o.rng_state || lr != o.lr || tensors.size() != o.tensors.size()) {
    return false;
  }
  if (serialize_checkpoint(*this) != serialize_checkpoint(o)) return false;
  return true;
}

Checkpoint snapshot(const model::AttentionFlow& net, std::uint64_t seed) {
  Checkpoint c;
  c.variant = net.variant();
  c.model = net.config();
  c.seed = seed;
  for (const auto& p : net.params()) c.tensors.emplace_back(p.name, p.tensor.clone());
  return c;
}

void load_tensors(model::AttentionFlow& net, const Checkpoint& ckpt) {
  if (ckpt.tensors.size() != net.params().size()) {
    throw FormatError("checkpoint: expected " + std::to_string(net.params().size()) +
                          " tensors, found " + std::to_string(ckpt.tensors.size()),
                      0);
  }
  for (const auto& [name, t] : ckpt.tensors) {
    auto* p = net.find(name);
    if (!p) throw FormatError("checkpoint: unknown tensor '" + name + "'", 0);
    if (p->tensor.shape() != t.shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(t.shape()) +
                            ", model expects " + shape_str(p->tensor.shape()),
                        0);
    }
    auto src = t.data();
    std::copy(src.begin(), src.end(), p->tensor.data().begin());
  }
}

model::AttentionFlow restore_model(const Checkpoint& ckpt) {
  model::AttentionFlow net(ckpt.model, ckpt.variant, ckpt.seed);
  load_tensors(net, ckpt);
  return net;
}

TrainResult train(std::span<const Example> examples, Variant variant,
                  const model::ModelConfig& model_config, const TrainConfig& config,
                  const std::optional<Checkpoint>& resume, const ProgressFn& progress) {
  config.validate();
  if (examples.empty()) throw ParameterError("train: empty dataset");
  const std::size_t n = examples.size();
  const std::size_t bs = std::min(config.batch_size, n);

  model::AttentionFlow net(model_config, variant, config.seed);
  std::mt19937_64 rng(config.seed ^ kShuffleSalt);
  std::size_t start_epoch = 0, step = 0;
  const LrMap lr = learning_rates(variant, config.learning_rate);
  MomentumState opt{config.momentum, {}};

  if (resume) {
    if (resume->variant != variant) {
      throw ConfigError("train: checkpoint variant '" + model::variant_name(resume->variant) +
                        "' differs from requested '" + model::variant_name(variant) + "'");
    }
    if (resume->lr != lr || resume->momentum != config.momentum) {
      throw ConfigError("train: checkpoint optimizer settings differ from config");
    }
    for (const auto& [name, t] : resume->velocity) {
      auto d = t.data();
      opt.velocity[name].assign(d.begin(), d.end());
    }
    load_tensors(net, *resume);
    rng = rng_from_string(resume->rng_state);
    start_epoch = resume->epoch;
    step = resume->step;
  } else {
    std::vector<Tensor> calib;
    for (std::size_t b = 0; b < config.calibration_batches && b * bs < n; ++b) {
      std::vector<std::size_t> idx(std::min(bs, n - b * bs));
      std::iota(idx.begin(), idx.end(), b * bs);
      calib.push_back(stack_images(examples, idx));
    }
    net.calibrate_encoder(calib);
  }

  const bool frozen = model::encoder_frozen(variant);
  std::vector<Tensor> features;
  if (frozen) {
    NoGradGuard guard;
    features.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      features.push_back(net.encode(image_to_tensor(examples[i].image)));
    }
  }

  TrainResult result;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b * bs < n; ++b) {
      const std::span<const std::size_t> idx(order.data() + b * bs, std::min(bs, n - b * bs));
      const Tensor target = stack_targets(examples, idx);
      Tensor pred = frozen ? net.forward_features(stack_tensors(features, idx), model::Mode::Train)
                           : net.forward(stack_images(examples, idx), model::Mode::Train);
      Tensor l = loss(pred, target);
      const double value = l.item();
      if (!std::isfinite(value)) {
        Tape::current().clear();
        throw TrainingError("non-finite loss " + std::to_string(value) + " at batch index " +
                            std::to_string(b) + " (epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step) + ")");
      }
      backward(l);
      sgd_step(net.params(), lr, opt);
      for (auto& p : net.params()) p.tensor.release_grad();
      LossRecord rec{epoch, step, value};
      result.log.push_back(rec);
      if (progress) progress(rec);
      ++step;
    }
  }

  result.checkpoint = snapshot(net, config.seed);
  result.checkpoint.epoch = std::max(start_epoch, config.epochs);
  result.checkpoint.step = step;
  result.checkpoint.rng_state = rng_to_string(rng);
  result.checkpoint.lr = lr;
  result.checkpoint.momentum = config.momentum;
  for (auto& [name, v] : opt.velocity) {
    result.checkpoint.velocity.emplace_back(name, Tensor({v.size()}, v));
  }
  return result;
}

std::vector<std::pair<std::size_t, double>> epoch_means(std::span<const LossRecord> log) {
  std::vector<std::pair<std::size_t, double>> out;
  std::size_t count = 0;
  for (const auto& r : log) {
    if (out.empty() || out.back().first != r.epoch) {
      if (!out.empty()) out.back().second /= double(count);
      out.emplace_back(r.epoch, 0.0);
      count = 0;
    }
    out.back().second += r.loss;
    ++count;
  }
  if (!out.empty()) out.back().second /= double(count);
  return out;
}

void write_loss_csv(std::span<const LossRecord> log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "epoch,step,loss\n";
  char buf[64];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%.17g", r.loss);
    os << r.epoch << ',' << r.step << ',' << buf << '\n';
  }
  if (!os) throw IoError("failed writing " + path);
}

}  // namespace attflow::train
