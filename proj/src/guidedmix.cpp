#include "gmx/guidedmix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "gmx/layers.hpp"

namespace gmx {

namespace {

struct FieldDims {
  std::size_t classes, pixels;
};

FieldDims check_probability_field(const Tensor& probs, const Mask& mask) {
  if (probs.rank() != 3) throw Error(Errc::ShapeMismatch, "probability field must be [C,H,W]");
  if (probs.dim(1) != mask.height || probs.dim(2) != mask.width) {
    throw Error(Errc::ShapeMismatch, "probability field " + shape_string(probs.shape()) + " vs mask " +
                                         std::to_string(mask.height) + "x" + std::to_string(mask.width));
  }
  const std::size_t classes = probs.dim(0), pixels = mask.size();
  const auto p = probs.data();
  for (std::size_t i = 0; i < pixels; ++i) {
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double v = p[c * pixels + i];
      if (!(v >= 0.0)) throw Error(Errc::InvalidDistribution, "negative or NaN probability at pixel " + std::to_string(i));
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw Error(Errc::InvalidDistribution, "pixel " + std::to_string(i) + " sums to " + std::to_string(total));
    }
  }
  for (auto label : mask.labels) {
    if (label != kIgnore && label >= classes) throw Error(Errc::InvalidClass, "mask label " + std::to_string(label));
  }
  return {classes, pixels};
}

void check_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw Error(Errc::InvalidConfig, "lambda must lie in (0,1)");
}

}  // namespace

const char* to_string(Pairing p) { return p == Pairing::Random ? "random" : "similar"; }
const char* to_string(DecoupleMode m) { return m == DecoupleMode::Hard ? "hard" : "soft"; }

Pairing parse_pairing(const std::string& s) {
  if (s == "random") return Pairing::Random;
  if (s == "similar") return Pairing::Similar;
  throw Error(Errc::InvalidConfig, "pairing must be random|similar, got '" + s + "'");
}

DecoupleMode parse_decouple_mode(const std::string& s) {
  if (s == "hard") return DecoupleMode::Hard;
  if (s == "soft") return DecoupleMode::Soft;
  throw Error(Errc::InvalidConfig, "decouple_mode must be hard|soft, got '" + s + "'");
}

void MixConfig::validate() const {
  if (!(lambda_max > 0.0 && lambda_max < 1.0)) throw Error(Errc::InvalidConfig, "lambda_max must lie in (0,1)");
}

Mask PseudoMask::labels() const {
  if (hard) return *hard;
  const Tensor& field = soft.value();
  const std::size_t classes = field.dim(0), h = field.dim(1), w = field.dim(2), pixels = h * w;
  Mask out(h, w);
  const auto p = field.data();
  for (std::size_t i = 0; i < pixels; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (p[c * pixels + i] > p[best * pixels + i]) best = c;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

double sample_lambda(std::mt19937_64& rng, double lambda_max) {
  if (!(lambda_max > 0.0 && lambda_max < 1.0)) throw Error(Errc::InvalidConfig, "lambda_max must lie in (0,1)");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return lambda_max * (1.0 - unit(rng));
}

Assignment match_pairs(std::span<const Tensor> labeled_feats, std::span<const Tensor> unlabeled_feats, Pairing mode,
                       std::mt19937_64& rng) {
  if (labeled_feats.empty() || unlabeled_feats.empty()) throw Error(Errc::EmptyBatch, "match_pairs needs both lists non-empty");
  const std::size_t nl = labeled_feats.size(), nu = unlabeled_feats.size();
  Assignment out;
  if (mode == Pairing::Random) {
    std::vector<std::size_t> perm(nu);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t l = 0; l < std::min(nl, nu); ++l) out.emplace_back(l, perm[l]);
    return out;
  }

  const std::size_t dim = labeled_feats.front().size();
  std::vector<std::tuple<double, std::size_t, std::size_t>> candidates;
  candidates.reserve(nl * nu);
  for (std::size_t l = 0; l < nl; ++l) {
    for (std::size_t u = 0; u < nu; ++u) {
      const auto a = labeled_feats[l].data();
      const auto b = unlabeled_feats[u].data();
      if (a.size() != dim || b.size() != dim) throw Error(Errc::ShapeMismatch, "match_pairs: feature lengths differ");
      double d2 = 0.0;
      for (std::size_t i = 0; i < dim; ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
      candidates.emplace_back(std::sqrt(d2), l, u);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  std::vector<bool> used_l(nl, false), used_u(nu, false);
  for (const auto& [d, l, u] : candidates) {
    if (used_l[l] || used_u[u]) continue;
    used_l[l] = used_u[u] = true;
    out.emplace_back(l, u);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Tensor mix_inputs(const Tensor& labeled, const Tensor& unlabeled, double lambda) {
  if (labeled.shape() != unlabeled.shape()) {
    throw Error(Errc::ShapeMismatch, "mix_inputs: " + shape_string(labeled.shape()) + " vs " + shape_string(unlabeled.shape()));
  }
  check_lambda(lambda);
  Tensor out = Tensor::zeros(labeled.shape());
  auto o = out.data();
  const auto a = labeled.data();
  const auto b = unlabeled.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = lambda * a[i] + (1.0 - lambda) * b[i];
  return out;
}

PseudoMask decouple_soft(const Tensor& mixed_probs, const Mask& labeled_mask, double lambda) {
  check_lambda(lambda);
  const auto [classes, pixels] = check_probability_field(mixed_probs, labeled_mask);
  Tensor field = Tensor::zeros(mixed_probs.shape());
  auto q = field.data();
  const auto y = mixed_probs.data();
  for (std::size_t i = 0; i < pixels; ++i) {
    const std::size_t label = labeled_mask.labels[i];
    double total = 0.0;
    double peak = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double share = c == label ? lambda : 0.0;
      const double v = std::max(y[c * pixels + i] - share, 0.0) / (1.0 - lambda);
      q[c * pixels + i] = v;
      total += v;
      peak = std::max(peak, v);
    }
    if (peak <= 1e-12) {
      for (std::size_t c = 0; c < classes; ++c) q[c * pixels + i] = 1.0 / static_cast<double>(classes);
    } else {
      for (std::size_t c = 0; c < classes; ++c) q[c * pixels + i] /= total;
    }
  }
  PseudoMask out;
  out.mode = DecoupleMode::Soft;
  out.soft = std::move(field);
  return out;
}

PseudoMask decouple_hard(const Tensor& mixed_probs, const Mask& labeled_mask) {
  const auto [classes, pixels] = check_probability_field(mixed_probs, labeled_mask);
  Mask hard(labeled_mask.height, labeled_mask.width);
  const auto y = mixed_probs.data();
  for (std::size_t i = 0; i < pixels; ++i) {
    if (labeled_mask.labels[i] != 0) {
      hard.labels[i] = kIgnore;
      continue;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (y[c * pixels + i] > y[best * pixels + i]) best = c;
    }
    hard.labels[i] = static_cast<std::uint8_t>(best);
  }
  PseudoMask out;
  out.mode = DecoupleMode::Hard;
  out.hard = std::move(hard);
  return out;
}

ad::Var unsup_loss(const ad::Var& pred_u, const PseudoMask& pseudo, double weight) {
  if (!(weight >= 0.0)) throw Error(Errc::InvalidConfig, "unsupervised weight must be non-negative");
  ad::Var raw;
  if (pseudo.mode == DecoupleMode::Soft) {
    raw = nn::soft_mse(pred_u, pseudo.soft.value());
  } else {
    const Mask& hard = pseudo.hard.value();
    if (pred_u.shape().size() != 3 || pred_u.shape()[1] != hard.height || pred_u.shape()[2] != hard.width) {
      throw Error(Errc::ShapeMismatch, "unsup_loss: prediction " + shape_string(pred_u.shape()) + " vs pseudo mask");
    }
    raw = nn::cross_entropy(pred_u, hard.labels);
  }
  return ad::scale(raw, weight);
}

Tensor mixed_target(const Tensor& unlabeled_probs, const Mask& labeled_mask, double lambda) {
  check_lambda(lambda);
  const auto [classes, pixels] = check_probability_field(unlabeled_probs, labeled_mask);
  Tensor out = Tensor::zeros(unlabeled_probs.shape());
  auto o = out.data();
  const auto p = unlabeled_probs.data();
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < pixels; ++i) {
      const double onehot = labeled_mask.labels[i] == c ? 1.0 : 0.0;
      o[c * pixels + i] = lambda * onehot + (1.0 - lambda) * p[c * pixels + i];
    }
  }
  return out;
}

}  // namespace gmx
