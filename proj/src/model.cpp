#include "gmx/model.hpp"

#include "gmx/layers.hpp"

namespace gmx {

namespace {

std::string conv_name(const char* block, std::size_t i) { return std::string(block) + "." + std::to_string(i); }

}  // namespace

void ModelConfig::validate() const {
  if (encoder.size() < 2) throw Error(Errc::InvalidConfig, "encoder needs at least two blocks");
  std::size_t total_stride = 1;
  for (const auto& spec : encoder) {
    if (spec.out_channels == 0 || spec.kernel % 2 == 0 || spec.stride == 0) {
      throw Error(Errc::InvalidConfig, "encoder block needs positive channels, odd kernel and positive stride");
    }
    total_stride *= spec.stride;
  }
  if (encoder.front().stride != 2 || total_stride != 4) {
    throw Error(Errc::InvalidConfig, "encoder strides must give a skip at 1/2 and deep features at 1/4");
  }
  if (shuffle_factor != 2) throw Error(Errc::InvalidConfig, "decoder shuffle factor must be 2");
  if (num_classes < 2 || num_classes > 254) throw Error(Errc::InvalidConfig, "num_classes must be in [2,254]");
  if (embed_dim == 0 || decoder_channels == 0 || classifier_outputs == 0) {
    throw Error(Errc::InvalidConfig, "embed_dim, decoder_channels and classifier_outputs must be positive");
  }
  for (auto b : psp_bins) {
    if (b == 0) throw Error(Errc::InvalidConfig, "pyramid bins must be positive");
  }
}

SegModel::SegModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::uint64_t stream = 0;
  auto add_conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k) {
    const std::size_t fan_in = cin * k * k;
    params_.emplace(name + ".w", Tensor::he_normal({cout, cin, k, k}, fan_in, derive_seed(seed, ++stream)));
    params_.emplace(name + ".b", Tensor::zeros({cout}));
  };
  auto add_matrix = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    params_.emplace(name, Tensor::he_normal({rows, cols}, cols, derive_seed(seed, ++stream)));
  };

  std::size_t channels = config_.in_channels;
  for (std::size_t i = 0; i < config_.encoder.size(); ++i) {
    const auto& spec = config_.encoder[i];
    add_conv(conv_name("enc", i), spec.out_channels, channels, spec.kernel);
    channels = spec.out_channels;
  }
  const std::size_t deep = config_.deep_channels();
  const std::size_t r2 = config_.shuffle_factor * config_.shuffle_factor;
  add_matrix("mitrans.q", config_.embed_dim, deep);
  add_matrix("mitrans.k", config_.embed_dim, deep);
  add_matrix("mitrans.v", config_.embed_dim, deep);
  add_matrix("mitrans.o", deep, config_.embed_dim);
  add_conv("dec.0", config_.decoder_channels * r2, deep, 1);
  add_conv("dec.1", config_.num_classes * r2, config_.decoder_channels + config_.skip_channels(), 3);
  add_matrix("cls.w", config_.classifier_outputs, config_.feature_channels());
  params_.emplace("cls.b", Tensor::zeros({config_.classifier_outputs}));

  for (auto& [name, t] : params_) t.set_requires_grad(true);
}

void SegModel::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::size_t SegModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

std::vector<NamedTensor> SegModel::named_tensors() const {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : params_) {
    Tensor copy = t;
    copy.clear_grad();
    copy.set_requires_grad(false);
    out.emplace_back(name, std::move(copy));
  }
  return out;
}

void SegModel::load_tensors(const std::vector<NamedTensor>& tensors, const std::string& skip_prefix) {
  std::size_t matched = 0;
  for (const auto& [name, t] : tensors) {
    if (!skip_prefix.empty() && name.starts_with(skip_prefix)) continue;
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(Errc::CheckpointMismatch, "unexpected tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw Error(Errc::CheckpointMismatch, "tensor '" + name + "' has shape " + shape_string(t.shape()) +
                                                ", model expects " + shape_string(it->second.shape()));
    }
    ++matched;
  }
  if (matched != params_.size()) {
    throw Error(Errc::CheckpointMismatch, "checkpoint has " + std::to_string(matched) + " of " +
                                              std::to_string(params_.size()) + " model tensors");
  }
  for (const auto& [name, t] : tensors) {
    if (!skip_prefix.empty() && name.starts_with(skip_prefix)) continue;
    auto& dst = params_.at(name).storage();
    dst.assign(t.data().begin(), t.data().end());
  }
}

BoundModel::BoundModel(SegModel& model, ad::Graph& graph, bool trainable)
    : config_(&model.config()), graph_(&graph) {
  for (auto& [name, t] : model.params()) {
    vars_.emplace(name, trainable ? graph.leaf(t) : graph.constant(t));
  }
}

void validate_image_shape(const ModelConfig& config, const Shape& shape) {
  if (shape.size() != 3 || shape[0] != config.in_channels) {
    throw Error(Errc::InvalidShape, "expected image [" + std::to_string(config.in_channels) + ",H,W], got " +
                                        shape_string(shape));
  }
  if (shape[1] % 4 != 0 || shape[2] % 4 != 0) {
    throw Error(Errc::InvalidShape, "image dims must be divisible by 4, got " + shape_string(shape));
  }
}

EncoderOutput encode(const BoundModel& model, const ad::Var& image) {
  const auto& cfg = model.config();
  validate_image_shape(cfg, image.shape());
  EncoderOutput out;
  ad::Var x = image;
  for (std::size_t i = 0; i < cfg.encoder.size(); ++i) {
    const auto name = conv_name("enc", i);
    x = ad::relu(nn::conv2d(x, model[name + ".w"], model[name + ".b"], cfg.encoder[i].stride));
    if (i == 0) out.skip = x;
  }
  out.last = x;
  return out;
}

SegOutput forward_segnet(const BoundModel& model, const ad::Var& image, const std::optional<ad::Var>& reference) {
  const auto& cfg = model.config();
  EncoderOutput enc = encode(model, image);
  SegOutput out;
  out.features.skip = enc.skip;
  out.features.pooled = nn::global_avg_pool(enc.last);
  out.coarse = nn::pyramid_pool(enc.last, cfg.psp_bins);
  out.features.deep = out.coarse;
  if (reference) {
    auto refined = nn::mitrans(out.coarse, *reference,
                               {model["mitrans.q"], model["mitrans.k"], model["mitrans.v"], model["mitrans.o"]});
    out.features.deep = refined.output;
    out.affinity = refined.affinity;
  }
  const std::size_t r = cfg.shuffle_factor;
  ad::Var x = ad::relu(nn::conv2d(out.features.deep, model["dec.0.w"], model["dec.0.b"], 1));
  x = nn::pixel_shuffle(x, r);
  x = ad::concat({x, enc.skip});
  x = nn::pixel_shuffle(nn::conv2d(x, model["dec.1.w"], model["dec.1.b"], 1), r);
  out.probs = ad::softmax(x, 0);
  return out;
}

ad::Var classifier_head(const BoundModel& model, const ad::Var& pooled) {
  return nn::linear(pooled, model["cls.w"], model["cls.b"]);
}

ClassifierOutput forward_classifier(const BoundModel& model, const ad::Var& image) {
  EncoderOutput enc = encode(model, image);
  ad::Var feature = nn::global_avg_pool(enc.last);
  return {classifier_head(model, feature), feature};
}

}  // namespace gmx
