#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attflow/ops.hpp"
#include "attflow/tensor.hpp"

namespace attflow::model {

// Stage k: a 3x3 entry conv (stride 2 for k < 3; stride 1 with dilation for the
// last stage) followed by blocks[k] dilated basic residual blocks. Output stride 8.
struct EncoderConfig {
  std::array<std::size_t, 4> widths{8, 16, 32, 64};
  std::array<std::size_t, 4> blocks{0, 1, 1, 0};
  std::array<std::size_t, 4> dilation{1, 1, 1, 2};

  std::size_t out_channels() const { return widths[3]; }
  void validate() const;
};

struct GeneratorConfig {
  std::size_t residual_blocks = 9;
  std::size_t width = 16;  // 0: same as encoder output channels
  std::size_t out_channels = 2;
  // Start the final 1x1 projection at zero so initial predictions are exactly the
  // (zero) bias instead of the large values an unnormalized residual stream produces.
  bool zero_init_output = true;
};

struct ChannelAttentionConfig {
  std::array<std::size_t, 2> pool_grid{4, 6};
  std::size_t mid_channels = 0;  // 0: encoder channels / 4
  std::array<std::size_t, 2> conv1_kernel{3, 3};
  std::size_t conv1_stride = 2;
  std::size_t conv1_padding = 1;
  std::array<std::size_t, 2> conv2_kernel{2, 3};  // rows x cols; reduces the 2x3 grid to 1x1
};

struct SpatialAttentionConfig {
  std::size_t channels = 64;
  std::size_t bottleneck_channels = 16;
};

struct ModelConfig {
  EncoderConfig encoder;
  GeneratorConfig generator;
  ChannelAttentionConfig channel;
  SpatialAttentionConfig spatial;
  std::size_t upsample = 8;

  std::size_t generator_width() const {
    return generator.width ? generator.width : encoder.out_channels();
  }
  std::size_t channel_mid() const {
    return channel.mid_channels ? channel.mid_channels : std::max<std::size_t>(1, encoder.out_channels() / 4);
  }
};

enum class Variant { EncoderFrozen, EncoderJoint, EncoderFinetune, ChannelAttention, SpatialAttention };

std::string variant_name(Variant v);  // frozen, joint, finetune, channel, spatial
Variant parse_variant(const std::string& name);
bool has_channel_attention(Variant v);
bool has_spatial_attention(Variant v);
bool encoder_frozen(Variant v);

enum class ParamGroup { Encoder, Generator, ChannelAttention, SpatialAttention };
std::string group_name(ParamGroup g);

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor tensor;
  bool trainable = true;  // false for normalization running statistics
};

enum class Mode { Train, Eval };

// Receptive field (pixels) of one encoder output unit.
std::size_t encoder_receptive_field(const EncoderConfig& cfg);

class AttentionFlow {
 public:
  AttentionFlow(const ModelConfig& cfg, Variant variant, std::uint64_t seed);
  ~AttentionFlow();
  AttentionFlow(AttentionFlow&&) noexcept;
  AttentionFlow& operator=(AttentionFlow&&) noexcept;

  const ModelConfig& config() const { return cfg_; }
  Variant variant() const { return variant_; }

  // [B,3,H,W] -> [B,C_enc,H/8,W/8]. Encoder normalization always uses stored statistics.
  Tensor encode(const Tensor& image) const;
  Tensor channel_gate(const Tensor& features) const;      // [B,C,1,1] in (0,1)
  Tensor channel_attention(const Tensor& features) const;  // features * gate
  Tensor generate(const Tensor& features) const;           // [B,2,h,w]
  Tensor spatial_gate(const Tensor& maps, Mode mode);      // [B,2,h,w] in (0,1)
  Tensor spatial_attention(const Tensor& maps, Mode mode);
  // Everything after the encoder, including the final x8 upsampling.
  Tensor forward_features(const Tensor& features, Mode mode);
  Tensor forward(const Tensor& image, Mode mode);

  // Sets encoder normalization statistics to cumulative averages of batch
  // statistics over the given [B,3,H,W] batches.
  void calibrate_encoder(std::span<const Tensor> batches);

  std::vector<NamedParam>& params();
  const std::vector<NamedParam>& params() const;
  NamedParam* find(const std::string& name);
  std::size_t parameter_count(std::optional<ParamGroup> group = std::nullopt) const;
  // Marks parameters as requiring gradients according to the variant.
  void set_trainable_groups(bool encoder_trainable);

  struct Impl;

 private:
  ModelConfig cfg_;
  Variant variant_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace attflow::model
