#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gmx/dataio.hpp"
#include "gmx/guidedmix.hpp"
#include "gmx/model.hpp"

namespace gmx {

struct TrainConfig {
  double base_lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double power = 0.9;
  std::size_t max_iter = 4000;
  std::size_t batch_labeled = 4;
  std::size_t batch_unlabeled = 4;
  double unsup_weight_max = 1.0;
  /// 0 selects max(1, max_iter / 10).
  std::size_t ramp_len = 0;
  MixConfig mix;
  std::uint64_t seed = 0;
  /// 0 disables cropping.
  std::size_t crop = 0;
  double flip_prob = 0.5;
  std::size_t eval_every = 500;
  double cls_weight = 0.1;
  /// Relative weight of the mixed-image term inside the unsupervised loss.
  double mixed_weight = 1.0;

  void validate() const;
  std::size_t effective_ramp_len() const;
};

struct OptimizerState {
  std::map<std::string, Tensor> velocity;

  static OptimizerState zeros_like(const ParamMap& params);
  std::vector<NamedTensor> named_tensors() const;  // names prefixed "opt."
  void load(const std::vector<NamedTensor>& tensors);
};

/// base_lr * (1 - iter / max_iter)^power
double poly_lr(double base_lr, std::size_t iter, std::size_t max_iter, double power);

/// w_max * exp(-5 * (1 - min(iter / ramp_len, 1))^2)
double ramp_weight(std::size_t iter, std::size_t ramp_len, double w_max);

/// g = grad + weight_decay * param;  v = momentum * v + g;  param -= lr * v.
void sgd_step(ParamMap& params, OptimizerState& state, double lr, double momentum, double weight_decay);

struct AugmentResult {
  Tensor image;
  Mask mask;  // empty when no mask was given
};

/// Random crop (when config.crop > 0) then horizontal flip with probability
/// flip_prob, applied identically to image and mask.
AugmentResult augment(const Tensor& image, const Mask& mask, std::mt19937_64& rng, const TrainConfig& config);

struct StepMetrics {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss_sup = 0.0;
  double loss_unsup = 0.0;  // consistency against pseudo masks plus mixed-image term, weighted
  double loss_cls = 0.0;
  double weight_unsup = 0.0;
  double total = 0.0;
  std::optional<double> val_miou;

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

/// One optimisation step on pre-augmented batches. Unlabeled samples carry
/// no mask. Throws DivergedError on a non-finite loss.
StepMetrics train_step(SegModel& model, std::span<const Sample> labeled, std::span<const Tensor> unlabeled,
                       std::size_t iter, const TrainConfig& config, OptimizerState& state);

struct TrainData {
  std::vector<Sample> labeled;
  std::vector<Tensor> unlabeled;
  std::vector<Sample> val;
};

/// Trainer-visible view of a manifest: unlabeled masks are never read.
TrainData load_train_data(const DatasetManifest& manifest);

struct TrainResult {
  SegModel model;
  OptimizerState state;
  std::vector<StepMetrics> log;
  double final_val_miou = 0.0;
};

struct RunOutputs {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> metrics_csv;
  std::function<void(const StepMetrics&)> on_step;
};

/// The model run_training starts from.
SegModel initial_model(const ModelConfig& model_config, const TrainConfig& config);

TrainResult run_training(const ModelConfig& model_config, const TrainConfig& config, const TrainData& data,
                         const RunOutputs& outputs = {});

std::string format_metrics_csv(const std::vector<StepMetrics>& log);

std::vector<NamedTensor> checkpoint_tensors(const SegModel& model, const OptimizerState& state);

}  // namespace gmx
