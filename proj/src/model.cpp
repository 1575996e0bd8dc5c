#include "attflow/model.hpp"

#include <cmath>
#include <random>

#include "attflow/errors.hpp"
#include "attflow/tape.hpp"

namespace attflow::model {

namespace {

using ops::Conv2dOptions;

class ParamFactory {
 public:
  ParamFactory(std::vector<NamedParam>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  Tensor he_uniform(const std::string& name, ParamGroup g, Shape shape) {
    const std::size_t fan_in = shape[1] * shape[2] * shape[3];
    const double bound = std::sqrt(6.0 / double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape), 0.0, true);
    for (auto& v : t.data()) v = dist(rng_);
    return add(name, g, t, true);
  }
  Tensor constant(const std::string& name, ParamGroup g, Shape shape, double v, bool trainable = true) {
    return add(name, g, Tensor(std::move(shape), v, trainable), trainable);
  }

 private:
  Tensor add(const std::string& name, ParamGroup g, Tensor t, bool trainable) {
    store_.push_back(NamedParam{name, g, t, trainable});
    return t;
  }
  std::vector<NamedParam>& store_;
  std::mt19937_64 rng_;
};

struct Conv {
  Tensor weight, bias;  // bias may be undefined
  Conv2dOptions opt;

  static Conv make(ParamFactory& f, const std::string& name, ParamGroup g, std::size_t in,
                   std::size_t out, std::array<std::size_t, 2> k, Conv2dOptions opt, bool with_bias) {
    Conv c;
    c.weight = f.he_uniform(name + ".weight", g, {out, in, k[0], k[1]});
    if (with_bias) c.bias = f.constant(name + ".bias", g, {out}, 0.0);
    c.opt = opt;
    return c;
  }
  Tensor operator()(const Tensor& x) const {
    return bias.defined() ? ops::conv2d(x, weight, bias, opt) : ops::conv2d(x, weight, opt);
  }
};

Conv2dOptions same3x3(std::size_t dilation = 1, std::size_t stride = 1) {
  return {{stride, stride}, {dilation, dilation}, {dilation, dilation}};
}

struct BatchNorm {
  Tensor gamma, beta;
  ops::RunningStats stats;

  static BatchNorm make(ParamFactory& f, const std::string& name, ParamGroup g, std::size_t c) {
    BatchNorm bn;
    bn.gamma = f.constant(name + ".gamma", g, {c}, 1.0);
    bn.beta = f.constant(name + ".beta", g, {c}, 0.0);
    bn.stats.mean = f.constant(name + ".running_mean", g, {c}, 0.0, false);
    bn.stats.var = f.constant(name + ".running_var", g, {c}, 1.0, false);
    return bn;
  }
  Tensor operator()(const Tensor& x, ops::NormMode mode, double momentum = 0.1) {
    return ops::batch_norm(x, gamma, beta, stats, mode, momentum);
  }
  Tensor eval(const Tensor& x) const {
    auto s = stats;  // handles; eval mode does not modify them
    return ops::batch_norm(x, gamma, beta, s, ops::NormMode::Eval);
  }
};

struct InstanceNorm {
  Tensor gamma, beta;
  static InstanceNorm make(ParamFactory& f, const std::string& name, ParamGroup g, std::size_t c) {
    return {f.constant(name + ".gamma", g, {c}, 1.0), f.constant(name + ".beta", g, {c}, 0.0)};
  }
  Tensor operator()(const Tensor& x) const { return ops::instance_norm(x, gamma, beta); }
};

struct EncoderBlock {
  Conv conv1, conv2;
  BatchNorm bn1, bn2;
};

struct EncoderStage {
  Conv entry;
  BatchNorm entry_bn;
  std::vector<EncoderBlock> blocks;
};

struct GeneratorBlock {
  Conv conv1, conv2;
  InstanceNorm in1, in2;
};

}  // namespace

struct AttentionFlow::Impl {
  std::vector<NamedParam> params;
  std::vector<EncoderStage> stages;

  std::optional<Conv> gen_entry;  // 1x1 projection when the generator is narrower
  std::vector<GeneratorBlock> gen_blocks;
  Conv gen_out;

  std::optional<Conv> ca_conv1, ca_conv2;

  std::optional<Conv> sa_conv_in, sa_b1, sa_b2, sa_b3, sa_out;
  std::optional<BatchNorm> sa_bn_in, sa_bn1, sa_bn2, sa_bn3;

  // Calibration override for encoder normalization.
  bool calibrating = false;
  double calib_momentum = 0.0;

  Tensor encoder_bn(BatchNorm& bn, const Tensor& x) {
    if (calibrating) return bn(x, ops::NormMode::Train, calib_momentum);
    return bn.eval(x);
  }
};

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::EncoderFrozen: return "frozen";
    case Variant::EncoderJoint: return "joint";
    case Variant::EncoderFinetune: return "finetune";
    case Variant::ChannelAttention: return "channel";
    case Variant::SpatialAttention: return "spatial";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::EncoderFrozen, Variant::EncoderJoint, Variant::EncoderFinetune,
                    Variant::ChannelAttention, Variant::SpatialAttention})
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown variant '" + name + "' (expected frozen, joint, finetune, channel, spatial)");
}

bool has_channel_attention(Variant v) { return v == Variant::ChannelAttention; }
bool has_spatial_attention(Variant v) { return v == Variant::SpatialAttention; }
bool encoder_frozen(Variant v) {
  return v == Variant::EncoderFrozen || v == Variant::ChannelAttention;
}

std::string group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Encoder: return "encoder";
    case ParamGroup::Generator: return "generator";
    case ParamGroup::ChannelAttention: return "channel_attention";
    case ParamGroup::SpatialAttention: return "spatial_attention";
  }
  return "unknown";
}

void EncoderConfig::validate() const {
  for (std::size_t k = 0; k < 4; ++k) {
    if (widths[k] == 0) throw ConfigError("encoder: stage widths must be positive");
    if (dilation[k] == 0) throw ConfigError("encoder: dilations must be positive");
  }
}

std::size_t encoder_receptive_field(const EncoderConfig& cfg) {
  std::size_t rf = 1, jump = 1;
  auto layer = [&](std::size_t k, std::size_t dil, std::size_t stride) {
    rf += (k - 1) * dil * jump;
    jump *= stride;
  };
  for (std::size_t s = 0; s < 4; ++s) {
    const bool last = s == 3;
    layer(3, last ? cfg.dilation[s] : 1, last ? 1 : 2);
    for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
      layer(3, cfg.dilation[s], 1);
      layer(3, cfg.dilation[s], 1);
    }
  }
  return rf;
}

AttentionFlow::AttentionFlow(const ModelConfig& cfg, Variant variant, std::uint64_t seed)
    : cfg_(cfg), variant_(variant), impl_(std::make_unique<Impl>()) {
  cfg_.encoder.validate();
  if (cfg_.generator.out_channels != 2) throw ConfigError("generator: output channels must be 2");
  if (cfg_.upsample < 1) throw ConfigError("model: upsample factor must be >= 1");
  auto& im = *impl_;
  ParamFactory f(im.params, seed);

  const auto& ec = cfg_.encoder;
  std::size_t in = 3;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string base = "encoder.stage" + std::to_string(s);
    const bool last = s == 3;
    EncoderStage stage;
    const Conv2dOptions entry_opt =
        last ? same3x3(ec.dilation[s], 1) : Conv2dOptions{{2, 2}, {1, 1}, {1, 1}};
    stage.entry = Conv::make(f, base + ".entry", ParamGroup::Encoder, in, ec.widths[s], {3, 3},
                             entry_opt, false);
    stage.entry_bn = BatchNorm::make(f, base + ".entry_bn", ParamGroup::Encoder, ec.widths[s]);
    for (std::size_t b = 0; b < ec.blocks[s]; ++b) {
      const std::string bn = base + ".block" + std::to_string(b);
      EncoderBlock blk;
      blk.conv1 = Conv::make(f, bn + ".conv1", ParamGroup::Encoder, ec.widths[s], ec.widths[s],
                             {3, 3}, same3x3(ec.dilation[s]), false);
      blk.bn1 = BatchNorm::make(f, bn + ".bn1", ParamGroup::Encoder, ec.widths[s]);
      blk.conv2 = Conv::make(f, bn + ".conv2", ParamGroup::Encoder, ec.widths[s], ec.widths[s],
                             {3, 3}, same3x3(ec.dilation[s]), false);
      blk.bn2 = BatchNorm::make(f, bn + ".bn2", ParamGroup::Encoder, ec.widths[s]);
      stage.blocks.push_back(std::move(blk));
    }
    im.stages.push_back(std::move(stage));
    in = ec.widths[s];
  }

  const std::size_t C = ec.out_channels();
  if (has_channel_attention(variant_)) {
    const auto& cc = cfg_.channel;
    im.ca_conv1 = Conv::make(f, "channel_attention.conv1", ParamGroup::ChannelAttention, C,
                             cfg_.channel_mid(), cc.conv1_kernel,
                             {{cc.conv1_stride, cc.conv1_stride}, {cc.conv1_padding, cc.conv1_padding}, {1, 1}},
                             true);
    im.ca_conv2 = Conv::make(f, "channel_attention.conv2", ParamGroup::ChannelAttention,
                             cfg_.channel_mid(), C, cc.conv2_kernel, {}, true);
  }

  const std::size_t G = cfg_.generator_width();
  if (G != C) {
    im.gen_entry = Conv::make(f, "generator.entry", ParamGroup::Generator, C, G, {1, 1}, {}, true);
  }
  for (std::size_t b = 0; b < cfg_.generator.residual_blocks; ++b) {
    const std::string bn = "generator.block" + std::to_string(b);
    GeneratorBlock blk;
    blk.conv1 = Conv::make(f, bn + ".conv1", ParamGroup::Generator, G, G, {3, 3}, same3x3(), false);
    blk.in1 = InstanceNorm::make(f, bn + ".in1", ParamGroup::Generator, G);
    blk.conv2 = Conv::make(f, bn + ".conv2", ParamGroup::Generator, G, G, {3, 3}, same3x3(), false);
    blk.in2 = InstanceNorm::make(f, bn + ".in2", ParamGroup::Generator, G);
    im.gen_blocks.push_back(std::move(blk));
  }
  im.gen_out = Conv::make(f, "generator.out", ParamGroup::Generator, G, 2, {1, 1}, {}, true);
  if (cfg_.generator.zero_init_output) {
    for (auto& v : im.gen_out.weight.data()) v = 0.0;
  }

  if (has_spatial_attention(variant_)) {
    const auto& sc = cfg_.spatial;
    const auto g = ParamGroup::SpatialAttention;
    im.sa_conv_in = Conv::make(f, "spatial_attention.conv_in", g, 2, sc.channels, {3, 3}, same3x3(), false);
    im.sa_bn_in = BatchNorm::make(f, "spatial_attention.bn_in", g, sc.channels);
    im.sa_b1 = Conv::make(f, "spatial_attention.bottleneck.conv1", g, sc.channels,
                          sc.bottleneck_channels, {1, 1}, {}, false);
    im.sa_bn1 = BatchNorm::make(f, "spatial_attention.bottleneck.bn1", g, sc.bottleneck_channels);
    im.sa_b2 = Conv::make(f, "spatial_attention.bottleneck.conv2", g, sc.bottleneck_channels,
                          sc.bottleneck_channels, {3, 3}, same3x3(), false);
    im.sa_bn2 = BatchNorm::make(f, "spatial_attention.bottleneck.bn2", g, sc.bottleneck_channels);
    im.sa_b3 = Conv::make(f, "spatial_attention.bottleneck.conv3", g, sc.bottleneck_channels,
                          sc.channels, {1, 1}, {}, false);
    im.sa_bn3 = BatchNorm::make(f, "spatial_attention.bottleneck.bn3", g, sc.channels);
    im.sa_out = Conv::make(f, "spatial_attention.conv_out", g, sc.channels, 2, {3, 3}, same3x3(), true);
  }
  set_trainable_groups(!encoder_frozen(variant_));
}

AttentionFlow::~AttentionFlow() = default;
AttentionFlow::AttentionFlow(AttentionFlow&&) noexcept = default;
AttentionFlow& AttentionFlow::operator=(AttentionFlow&&) noexcept = default;

void AttentionFlow::set_trainable_groups(bool encoder_trainable) {
  for (auto& p : impl_->params) {
    const bool on = p.trainable && (p.group != ParamGroup::Encoder || encoder_trainable);
    p.tensor.set_requires_grad(on);
  }
}

Tensor AttentionFlow::encode(const Tensor& image) const {
  if (image.ndim() != 4 || image.dim(1) != 3) {
    throw ParameterError("encode: expected [B,3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0) {
    throw ParameterError("encode: height and width must be divisible by 8, got " +
                         shape_str(image.shape()));
  }
  auto& im = *impl_;
  Tensor x = image;
  for (auto& stage : im.stages) {
    x = ops::relu(im.encoder_bn(stage.entry_bn, stage.entry(x)));
    for (auto& blk : stage.blocks) {
      Tensor y = ops::relu(im.encoder_bn(blk.bn1, blk.conv1(x)));
      y = im.encoder_bn(blk.bn2, blk.conv2(y));
      x = ops::relu(ops::add(y, x));
    }
  }
  return x;
}

Tensor AttentionFlow::channel_gate(const Tensor& features) const {
  auto& im = *impl_;
  if (!im.ca_conv1) throw ContractError("channel_gate: variant has no channel attention");
  const auto& grid = cfg_.channel.pool_grid;
  Tensor pooled = ops::adaptive_avg_pool2d(features, {grid[0], grid[1]});
  Tensor hidden = ops::relu((*im.ca_conv1)(pooled));
  Tensor gate = ops::sigmoid((*im.ca_conv2)(hidden));
  if (gate.dim(2) != 1 || gate.dim(3) != 1) {
    throw ConfigError("channel attention: layer recipe yields gate " + shape_str(gate.shape()) +
                      ", expected [B,C,1,1]");
  }
  return gate;
}

Tensor AttentionFlow::channel_attention(const Tensor& features) const {
  return ops::mul(features, channel_gate(features));
}

Tensor AttentionFlow::generate(const Tensor& features) const {
  auto& im = *impl_;
  if (features.ndim() != 4 || features.dim(1) != cfg_.encoder.out_channels()) {
    throw ParameterError("generate: expected " + std::to_string(cfg_.encoder.out_channels()) +
                         " input channels, got " + shape_str(features.shape()));
  }
  Tensor x = im.gen_entry ? (*im.gen_entry)(features) : features;
  for (auto& blk : im.gen_blocks) {
    Tensor y = ops::relu(blk.in1(blk.conv1(x)));
    y = blk.in2(blk.conv2(y));
    x = ops::add(x, y);
  }
  return im.gen_out(ops::relu(x));
}

Tensor AttentionFlow::spatial_gate(const Tensor& maps, Mode mode) {
  auto& im = *impl_;
  if (!im.sa_conv_in) throw ContractError("spatial_gate: variant has no spatial attention");
  if (maps.ndim() != 4 || maps.dim(1) != 2) {
    throw ParameterError("spatial_gate: expected [B,2,h,w], got " + shape_str(maps.shape()));
  }
  const auto nm = mode == Mode::Train ? ops::NormMode::Train : ops::NormMode::Eval;
  Tensor x = ops::relu((*im.sa_bn_in)((*im.sa_conv_in)(maps), nm));
  Tensor y = ops::relu((*im.sa_bn1)((*im.sa_b1)(x), nm));
  y = ops::relu((*im.sa_bn2)((*im.sa_b2)(y), nm));
  y = (*im.sa_bn3)((*im.sa_b3)(y), nm);
  x = ops::relu(ops::add(y, x));
  return ops::sigmoid((*im.sa_out)(x));
}

Tensor AttentionFlow::spatial_attention(const Tensor& maps, Mode mode) {
  return ops::mul(maps, spatial_gate(maps, mode));
}

Tensor AttentionFlow::forward_features(const Tensor& features, Mode mode) {
  Tensor x = has_channel_attention(variant_) ? channel_attention(features) : features;
  Tensor maps = generate(x);
  if (has_spatial_attention(variant_)) maps = spatial_attention(maps, mode);
  return ops::upsample_bilinear(maps, cfg_.upsample);
}

Tensor AttentionFlow::forward(const Tensor& image, Mode mode) {
  return forward_features(encode(image), mode);
}

void AttentionFlow::calibrate_encoder(std::span<const Tensor> batches) {
  NoGradGuard guard;
  auto& im = *impl_;
  im.calibrating = true;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    im.calib_momentum = 1.0 / double(k + 1);
    encode(batches[k]);
  }
  im.calibrating = false;
}

std::vector<NamedParam>& AttentionFlow::params() { return impl_->params; }
const std::vector<NamedParam>& AttentionFlow::params() const { return impl_->params; }

NamedParam* AttentionFlow::find(const std::string& name) {
  for (auto& p : impl_->params)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t AttentionFlow::parameter_count(std::optional<ParamGroup> group) const {
  std::size_t n = 0;
  for (const auto& p : impl_->params)
    if (p.trainable && (!group || p.group == *group)) n += p.tensor.numel();
  return n;
}

}  // namespace attflow::model
