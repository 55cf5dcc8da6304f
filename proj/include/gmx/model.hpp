#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmx/autodiff.hpp"
#include "gmx/checkpoint.hpp"

namespace gmx {

struct ConvSpec {
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t stride;
};

/// Architecture of the desk-scale segmentation network.
///
/// encoder[0] output is the skip feature (H/2); the last encoder output goes
/// through pyramid pooling to form the deep feature (H/4). The decoder is a
/// 1x1 conv + pixel shuffle back to H/2, concatenation with the skip
/// feature, then a 3x3 conv + pixel shuffle to class logits at H.
struct ModelConfig {
  std::size_t in_channels = 3;
  std::vector<ConvSpec> encoder{{16, 3, 2}, {32, 3, 2}, {64, 3, 1}};
  std::vector<std::size_t> psp_bins{1, 2, 3};
  std::size_t embed_dim = 16;
  std::size_t decoder_channels = 16;
  std::size_t shuffle_factor = 2;
  std::size_t num_classes = 4;
  /// Outputs of the presence classifier (one per foreground class).
  std::size_t classifier_outputs = 3;

  void validate() const;
  std::size_t feature_channels() const { return encoder.back().out_channels; }
  std::size_t deep_channels() const { return feature_channels() * (1 + psp_bins.size()); }
  std::size_t skip_channels() const { return encoder.front().out_channels; }
};

using ParamMap = std::map<std::string, Tensor>;

class SegModel {
 public:
  SegModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParamMap& params() noexcept { return params_; }
  const ParamMap& params() const noexcept { return params_; }

  void zero_grad();
  std::size_t parameter_count() const;

  std::vector<NamedTensor> named_tensors() const;
  /// Replaces parameter values; names and shapes must match exactly.
  /// Throws CheckpointMismatch otherwise. Entries whose name starts with
  /// `skip_prefix` are ignored.
  void load_tensors(const std::vector<NamedTensor>& tensors, const std::string& skip_prefix = "opt.");

 private:
  ModelConfig config_;
  ParamMap params_;
};

/// Parameters of a SegModel bound into one graph.
class BoundModel {
 public:
  /// With `trainable == false` parameters enter the graph as constants.
  BoundModel(SegModel& model, ad::Graph& graph, bool trainable);

  const ModelConfig& config() const { return *config_; }
  ad::Graph& graph() const { return *graph_; }
  const ad::Var& operator[](const std::string& name) const { return vars_.at(name); }

 private:
  const ModelConfig* config_;
  ad::Graph* graph_;
  std::map<std::string, ad::Var> vars_;
};

struct FeatureBundle {
  ad::Var deep;    // [C_deep, H/4, W/4] after pyramid pooling (and MITrans when used)
  ad::Var skip;    // [C_skip, H/2, W/2]
  ad::Var pooled;  // [C_f] global average of the encoder output, pre-PSP
};

struct EncoderOutput {
  ad::Var skip;
  ad::Var last;
};

struct SegOutput {
  ad::Var probs;  // [C,H,W]
  FeatureBundle features;
  /// Deep features before MITrans; the tensor other images reference.
  ad::Var coarse;
  std::optional<ad::Var> affinity;
};

struct ClassifierOutput {
  ad::Var logits;   // [classifier_outputs]
  ad::Var feature;  // [C_f]
};

void validate_image_shape(const ModelConfig& config, const Shape& shape);

EncoderOutput encode(const BoundModel& model, const ad::Var& image);

/// Full segmentation forward. When `reference` is given, MITrans refines the
/// pyramid-pooled features using it before decoding.
SegOutput forward_segnet(const BoundModel& model, const ad::Var& image,
                         const std::optional<ad::Var>& reference = std::nullopt);

ClassifierOutput forward_classifier(const BoundModel& model, const ad::Var& image);

/// Presence logits from an already computed pooled feature.
ad::Var classifier_head(const BoundModel& model, const ad::Var& pooled);

}  // namespace gmx
