#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attflow/heatmap.hpp"
#include "attflow/image.hpp"
#include "attflow/model.hpp"
#include "attflow/scene.hpp"
#include "attflow/tensor.hpp"

namespace attflow::train {

struct TrainConfig {
  // Generator and attention blocks. Narrow layers take small steps per unit lr,
  // so the default is well above the usual 0.01 and uses momentum.
  double learning_rate = 0.1;
  double momentum = 0.9;  // heavy-ball coefficient; 0 is plain SGD
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  // Number of leading training batches used to set encoder normalization statistics.
  std::size_t calibration_batches = 8;

  void validate() const;
};

using LrMap = std::map<model::ParamGroup, double>;

// Encoder lr: 0 (frozen, channel), lr (joint), lr / 10 (finetune, spatial).
double encoder_learning_rate(model::Variant variant, double learning_rate);
LrMap learning_rates(model::Variant variant, double learning_rate);

// One training frame: RGB image and 2-channel target (faces, co-attention).
struct Example {
  Image image;
  Image target;
};

Example make_example(const scene::Scene& scene, const heatmap::FusionParams& fusion = {});
std::vector<Example> make_examples(std::span<const scene::Scene> scenes,
                                   const heatmap::FusionParams& fusion = {});

// Stacks images (or targets) of examples[indices] into [B,C,H,W].
Tensor stack_images(std::span<const Example> examples, std::span<const std::size_t> indices);
Tensor stack_targets(std::span<const Example> examples, std::span<const std::size_t> indices);
Tensor image_to_tensor(const Image& img);  // [1,C,H,W]

// Mean squared error over all elements; throws ParameterError on shape mismatch.
Tensor loss(const Tensor& pred, const Tensor& target);

// p -= lr(group) * grad for every parameter that requires gradients. Parameters
// in groups with lr 0 are left untouched. Throws ContractError when a trainable
// parameter has no gradient buffer.
void sgd_step(std::vector<model::NamedParam>& params, const LrMap& lr);

// Velocity buffers keyed by parameter name: v = momentum * v + g; p -= lr * v.
struct MomentumState {
  double momentum = 0.0;
  std::map<std::string, std::vector<double>> velocity;
};
void sgd_step(std::vector<model::NamedParam>& params, const LrMap& lr, MomentumState& state);

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step, counted from 0
  double loss = 0.0;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  model::Variant variant = model::Variant::EncoderFrozen;
  model::ModelConfig model;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // completed optimizer steps
  std::string rng_state;    // textual mt19937_64 state
  LrMap lr;
  double momentum = 0.0;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, Tensor>> velocity;  // optimizer buffers, by parameter name

  bool operator==(const Checkpoint& other) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
// Throws VersionError on a version mismatch and FormatError (with byte offset)
// on truncated or malformed input.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(const model::AttentionFlow& net, std::uint64_t seed);
// Builds the network described by ckpt and copies its tensors in.
model::AttentionFlow restore_model(const Checkpoint& ckpt);
void load_tensors(model::AttentionFlow& net, const Checkpoint& ckpt);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> log;  // one record per optimizer step
};

using ProgressFn = std::function<void(const LossRecord&)>;

// Deterministic given (examples, variant, configs). With `resume`, continues
// from its epoch up to config.epochs using the stored weights and RNG state; the
// returned log then only covers the newly run steps. Throws TrainingError on a
// non-finite loss, naming the batch.
TrainResult train(std::span<const Example> examples, model::Variant variant,
                  const model::ModelConfig& model_config, const TrainConfig& config,
                  const std::optional<Checkpoint>& resume = std::nullopt,
                  const ProgressFn& progress = {});

// Per-epoch mean loss from a per-step log.
std::vector<std::pair<std::size_t, double>> epoch_means(std::span<const LossRecord> log);

void write_loss_csv(std::span<const LossRecord> log, const std::string& path);

}  // namespace attflow::train
