#include "gmx/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "gmx/evalkit.hpp"
#include "gmx/layers.hpp"

namespace gmx {

namespace {

// PRNG stream identifiers.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kLabeledOrder = 2;
constexpr std::uint64_t kUnlabeledOrder = 3;
constexpr std::uint64_t kLabeledAugment = 4;
constexpr std::uint64_t kUnlabeledAugment = 5;
constexpr std::uint64_t kStepStream = 6;

std::vector<double> presence_targets(const Mask& mask, std::size_t outputs) {
  std::vector<double> t(outputs, 0.0);
  for (auto label : mask.labels) {
    if (label != 0 && label != kIgnore && label <= outputs) t[label - 1] = 1.0;
  }
  return t;
}

ad::Var mean_of(const std::vector<ad::Var>& terms) {
  ad::Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return ad::scale(total, 1.0 / static_cast<double>(terms.size()));
}

/// Cycles through a dataset in per-epoch shuffled order.
class Stream {
 public:
  Stream(std::size_t size, std::uint64_t seed, std::uint64_t stream) : size_(size), seed_(seed), stream_(stream) {
    reshuffle();
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    order_.resize(size_);
    std::iota(order_.begin(), order_.end(), 0);
    std::mt19937_64 rng(derive_seed(seed_, stream_, epoch_));
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  std::size_t size_;
  std::uint64_t seed_, stream_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw Error(Errc::InvalidConfig, "base_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(Errc::InvalidConfig, "momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw Error(Errc::InvalidConfig, "weight_decay must be non-negative");
  if (!(power > 0.0)) throw Error(Errc::InvalidConfig, "power must be positive");
  if (max_iter < 1) throw Error(Errc::InvalidConfig, "max_iter must be at least 1");
  if (batch_labeled < 1 || batch_unlabeled < 1) throw Error(Errc::InvalidConfig, "batch sizes must be positive");
  if (!(unsup_weight_max >= 0.0)) throw Error(Errc::InvalidConfig, "unsup_weight_max must be non-negative");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw Error(Errc::InvalidConfig, "flip_prob must lie in [0,1]");
  if (!(cls_weight >= 0.0)) throw Error(Errc::InvalidConfig, "cls_weight must be non-negative");
  if (!(mixed_weight >= 0.0)) throw Error(Errc::InvalidConfig, "mixed_weight must be non-negative");
  if (eval_every < 1) throw Error(Errc::InvalidConfig, "eval_every must be at least 1");
  if (crop != 0 && crop % 4 != 0) throw Error(Errc::InvalidConfig, "crop must be a multiple of 4");
  mix.validate();
}

std::size_t TrainConfig::effective_ramp_len() const {
  return ramp_len != 0 ? ramp_len : std::max<std::size_t>(1, max_iter / 10);
}

OptimizerState OptimizerState::zeros_like(const ParamMap& params) {
  OptimizerState state;
  for (const auto& [name, t] : params) state.velocity.emplace(name, Tensor::zeros(t.shape()));
  return state;
}

std::vector<NamedTensor> OptimizerState::named_tensors() const {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : velocity) out.emplace_back("opt." + name, t);
  return out;
}

void OptimizerState::load(const std::vector<NamedTensor>& tensors) {
  std::size_t matched = 0;
  for (const auto& [name, t] : tensors) {
    if (!name.starts_with("opt.")) continue;
    auto it = velocity.find(name.substr(4));
    if (it == velocity.end() || it->second.shape() != t.shape()) {
      throw Error(Errc::StateMismatch, "optimizer tensor '" + name + "' does not match the model");
    }
    it->second = t;
    ++matched;
  }
  if (matched != velocity.size()) throw Error(Errc::StateMismatch, "checkpoint lacks optimizer state for some parameters");
}

double poly_lr(double base_lr, std::size_t iter, std::size_t max_iter, double power) {
  if (max_iter == 0 || iter > max_iter) {
    throw Error(Errc::InvalidIteration, "iteration " + std::to_string(iter) + " outside [0," + std::to_string(max_iter) + "]");
  }
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

double ramp_weight(std::size_t iter, std::size_t ramp_len, double w_max) {
  if (ramp_len == 0) throw Error(Errc::InvalidConfig, "ramp_len must be at least 1");
  const double t = std::min(static_cast<double>(iter) / static_cast<double>(ramp_len), 1.0);
  return w_max * std::exp(-5.0 * (1.0 - t) * (1.0 - t));
}

void sgd_step(ParamMap& params, OptimizerState& state, double lr, double momentum, double weight_decay) {
  if (params.size() != state.velocity.size()) throw Error(Errc::StateMismatch, "parameter and velocity counts differ");
  for (auto& [name, param] : params) {
    auto it = state.velocity.find(name);
    if (it == state.velocity.end() || it->second.size() != param.size()) {
      throw Error(Errc::StateMismatch, "no matching velocity for '" + name + "'");
    }
    auto p = param.data();
    auto v = it->second.data();
    const auto g = param.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + (g[i] + weight_decay * p[i]);
      p[i] -= lr * v[i];
    }
  }
}

AugmentResult augment(const Tensor& image, const Mask& mask, std::mt19937_64& rng, const TrainConfig& config) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  const bool has_mask = mask.size() != 0;
  if (has_mask && (mask.height != h || mask.width != w)) throw Error(Errc::ShapeMismatch, "augment: image/mask sizes differ");
  AugmentResult out{image, mask};
  if (config.crop != 0) {
    if (config.crop > std::min(h, w)) {
      throw Error(Errc::InvalidConfig, "crop " + std::to_string(config.crop) + " exceeds image " + shape_string(image.shape()));
    }
    std::uniform_int_distribution<std::size_t> top_dist(0, h - config.crop), left_dist(0, w - config.crop);
    const std::size_t top = top_dist(rng), left = left_dist(rng);
    out.image = crop(out.image, top, left, config.crop);
    if (has_mask) out.mask = crop(out.mask, top, left, config.crop);
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < config.flip_prob) {
    out.image = flip_horizontal(out.image);
    if (has_mask) out.mask = flip_horizontal(out.mask);
  }
  return out;
}

StepMetrics train_step(SegModel& model, std::span<const Sample> labeled, std::span<const Tensor> unlabeled,
                       std::size_t iter, const TrainConfig& config, OptimizerState& state) {
  if (labeled.empty()) throw Error(Errc::EmptyBatch, "labeled batch is empty");
  StepMetrics m;
  m.iter = iter;
  m.lr = poly_lr(config.base_lr, iter, config.max_iter, config.power);
  m.weight_unsup = ramp_weight(iter, config.effective_ramp_len(), config.unsup_weight_max);
  const auto& mc = model.config();

  model.zero_grad();
  try {
    ad::Graph graph;
    BoundModel bound(model, graph, true);

    std::vector<ad::Var> sup_terms, cls_terms;
    std::vector<Tensor> labeled_coarse, labeled_feats;
    for (const auto& s : labeled) {
      SegOutput out = forward_segnet(bound, graph.constant(s.image));
      sup_terms.push_back(nn::cross_entropy(out.probs, s.mask.labels));
      const auto targets = presence_targets(s.mask, mc.classifier_outputs);
      cls_terms.push_back(nn::bce_with_logits(classifier_head(bound, out.features.pooled), targets));
      labeled_coarse.push_back(out.coarse.value());
      labeled_feats.push_back(out.features.pooled.value());
    }
    ad::Var loss_sup = mean_of(sup_terms);
    ad::Var loss_cls = mean_of(cls_terms);
    ad::Var total = ad::add(loss_sup, ad::scale(loss_cls, config.cls_weight));
    m.loss_sup = loss_sup.value()[0];
    m.loss_cls = loss_cls.value()[0];

    if (m.weight_unsup > 0.0) {
      if (unlabeled.empty()) throw Error(Errc::EmptyBatch, "unlabeled batch is empty");
      std::vector<Tensor> unlabeled_feats;
      {
        ad::Graph probe;
        BoundModel frozen(model, probe, false);
        for (const auto& x : unlabeled) unlabeled_feats.push_back(forward_classifier(frozen, probe.constant(x)).feature.value());
      }
      std::mt19937_64 rng(derive_seed(config.seed, kStepStream, iter));
      const Assignment pairs = match_pairs(labeled_feats, unlabeled_feats, config.mix.pairing, rng);

      std::vector<ad::Var> unsup_terms;
      for (const auto& [li, ui] : pairs) {
        const double lambda = sample_lambda(rng, config.mix.lambda_max);
        const Mask& mask_l = labeled[li].mask;
        const Tensor mixed = mix_inputs(labeled[li].image, unlabeled[ui], lambda);

        std::optional<ad::Var> reference;
        if (config.mix.use_mitrans) reference = graph.constant(labeled_coarse[li]);
        ad::Var y_m = forward_segnet(bound, graph.constant(mixed), reference).probs;
        ad::Var pred_u = forward_segnet(bound, graph.constant(unlabeled[ui])).probs;

        const PseudoMask pseudo = config.mix.decouple_mode == DecoupleMode::Soft
                                      ? decouple_soft(y_m.value(), mask_l, lambda)
                                      : decouple_hard(y_m.value(), mask_l);
        ad::Var consistency = unsup_loss(pred_u, pseudo, 1.0);
        if (config.mixed_weight > 0.0) {
          ad::Var mixed_term = nn::soft_mse(y_m, mixed_target(pred_u.value(), mask_l, lambda));
          consistency = ad::add(consistency, ad::scale(mixed_term, config.mixed_weight));
        }
        unsup_terms.push_back(consistency);
      }
      ad::Var loss_unsup = ad::scale(mean_of(unsup_terms), m.weight_unsup);
      m.loss_unsup = loss_unsup.value()[0];
      total = ad::add(total, loss_unsup);
    }
    m.total = total.value()[0];
    if (!std::isfinite(m.total)) throw DivergedError(static_cast<long>(iter), "non-finite total loss");
    graph.backward(total);
  } catch (const DivergedError&) {
    throw;
  } catch (const Error& e) {
    if (e.code() == Errc::DomainError) throw DivergedError(static_cast<long>(iter), e.what());
    throw;
  }

  for (const auto& [name, t] : model.params()) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw DivergedError(static_cast<long>(iter), "non-finite gradient in " + name);
    }
  }
  sgd_step(model.params(), state, m.lr, config.momentum, config.weight_decay);
  return m;
}

SegModel initial_model(const ModelConfig& model_config, const TrainConfig& config) {
  return SegModel(model_config, derive_seed(config.seed, kInitStream));
}

TrainData load_train_data(const DatasetManifest& manifest) {
  TrainData data;
  data.labeled = load_split(manifest, Split::Labeled, false);
  for (auto& s : load_split(manifest, Split::Unlabeled, false)) data.unlabeled.push_back(std::move(s.image));
  data.val = load_split(manifest, Split::Val, false);
  return data;
}

std::vector<NamedTensor> checkpoint_tensors(const SegModel& model, const OptimizerState& state) {
  auto tensors = model.named_tensors();
  for (auto& t : state.named_tensors()) tensors.push_back(std::move(t));
  return tensors;
}

TrainResult run_training(const ModelConfig& model_config, const TrainConfig& config, const TrainData& data,
                         const RunOutputs& outputs) {
  config.validate();
  if (data.labeled.empty()) throw Error(Errc::EmptyBatch, "no labeled training data");
  if (config.unsup_weight_max > 0.0 && data.unlabeled.empty()) throw Error(Errc::EmptyBatch, "no unlabeled training data");

  TrainResult result{initial_model(model_config, config), {}, {}, 0.0};
  result.state = OptimizerState::zeros_like(result.model.params());

  Stream labeled_order(data.labeled.size(), config.seed, kLabeledOrder);
  std::optional<Stream> unlabeled_order;
  if (!data.unlabeled.empty()) unlabeled_order.emplace(data.unlabeled.size(), config.seed, kUnlabeledOrder);

  const bool use_unlabeled = config.unsup_weight_max > 0.0;
  for (std::size_t iter = 0; iter < config.max_iter; ++iter) {
    std::vector<Sample> lbatch;
    for (std::size_t i = 0; i < config.batch_labeled; ++i) {
      const Sample& s = data.labeled[labeled_order.next()];
      std::mt19937_64 rng(derive_seed(config.seed, kLabeledAugment, iter * config.batch_labeled + i));
      auto aug = augment(s.image, s.mask, rng, config);
      lbatch.push_back({std::move(aug.image), std::move(aug.mask)});
    }
    std::vector<Tensor> ubatch;
    if (use_unlabeled) {
      for (std::size_t i = 0; i < config.batch_unlabeled; ++i) {
        const Tensor& x = data.unlabeled[unlabeled_order->next()];
        std::mt19937_64 rng(derive_seed(config.seed, kUnlabeledAugment, iter * config.batch_unlabeled + i));
        ubatch.push_back(augment(x, Mask{}, rng, config).image);
      }
    }

    StepMetrics m = train_step(result.model, lbatch, ubatch, iter, config, result.state);
    const bool last = iter + 1 == config.max_iter;
    if (!data.val.empty() && (last || (iter + 1) % config.eval_every == 0)) {
      m.val_miou = miou(evaluate(result.model, data.val, false)).mean;
      if (last) result.final_val_miou = *m.val_miou;
    }
    if (outputs.on_step) outputs.on_step(m);
    result.log.push_back(m);
  }

  for (auto& [name, t] : result.model.params()) t.clear_grad();
  if (outputs.checkpoint) save_checkpoint(*outputs.checkpoint, checkpoint_tensors(result.model, result.state));
  if (outputs.metrics_csv) write_file_bytes(*outputs.metrics_csv, format_metrics_csv(result.log));
  return result;
}

std::string format_metrics_csv(const std::vector<StepMetrics>& log) {
  std::ostringstream out;
  out << "iter,lr,loss_sup,loss_unsup,loss_cls,weight_unsup,val_miou\n";
  for (const auto& m : log) {
    out << m.iter << ',' << format_double(m.lr) << ',' << format_double(m.loss_sup) << ','
        << format_double(m.loss_unsup) << ',' << format_double(m.loss_cls) << ',' << format_double(m.weight_unsup)
        << ',' << (m.val_miou ? format_double(*m.val_miou) : std::string()) << '\n';
  }
  return out.str();
}

}  // namespace gmx
