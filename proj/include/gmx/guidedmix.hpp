#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "gmx/autodiff.hpp"
#include "gmx/mask.hpp"

namespace gmx {

enum class Pairing { Random, Similar };
enum class DecoupleMode { Hard, Soft };

const char* to_string(Pairing p);
const char* to_string(DecoupleMode m);
Pairing parse_pairing(const std::string& s);
DecoupleMode parse_decouple_mode(const std::string& s);

struct MixConfig {
  double lambda_max = 0.5;
  Pairing pairing = Pairing::Similar;
  DecoupleMode decouple_mode = DecoupleMode::Soft;
  /// Refine the mixed forward pass with the labeled partner's features.
  bool use_mitrans = true;

  void validate() const;
};

struct MixRecord {
  std::size_t labeled_idx = 0;
  std::size_t unlabeled_idx = 0;
  double lambda = 0.0;
  Tensor mixed_image;  // [3,H,W]
  Mask labeled_mask;
};

/// Soft mode fills `soft` with a [C,H,W] probability field; hard mode fills
/// `hard` with class indices or kIgnore.
struct PseudoMask {
  DecoupleMode mode = DecoupleMode::Soft;
  std::optional<Tensor> soft;
  std::optional<Mask> hard;

  /// Per-pixel argmax of the soft field, or the hard labels.
  Mask labels() const;
};

/// Uniform draw on (0, lambda_max].
double sample_lambda(std::mt19937_64& rng, double lambda_max);

using Assignment = std::vector<std::pair<std::size_t, std::size_t>>;

/// Pairs labeled with unlabeled samples. Similar mode takes pairs in order of
/// increasing Euclidean feature distance, each index used at most once, ties
/// going to the lower labeled then lower unlabeled index. Random mode assigns
/// a seeded random permutation of the unlabeled indices. Result is sorted by
/// labeled index and has min(|labeled|, |unlabeled|) entries.
Assignment match_pairs(std::span<const Tensor> labeled_feats, std::span<const Tensor> unlabeled_feats, Pairing mode,
                       std::mt19937_64& rng);

/// lambda * x_l + (1 - lambda) * x_u
Tensor mix_inputs(const Tensor& labeled, const Tensor& unlabeled, double lambda);

/// Removes the labeled one-hot share from a mixed prediction:
///   q = max(y_m - lambda * onehot(mask), 0) / (1 - lambda), renormalized per
///   pixel, uniform where nothing survives the clamp.
PseudoMask decouple_soft(const Tensor& mixed_probs, const Mask& labeled_mask, double lambda);

/// argmax of the mixed prediction where the labeled mask is background,
/// kIgnore wherever the labeled image has foreground.
PseudoMask decouple_hard(const Tensor& mixed_probs, const Mask& labeled_mask);

/// Consistency loss of an unlabeled prediction against a constant pseudo
/// mask: weight * soft_mse in soft mode, weight * masked cross-entropy in
/// hard mode.
ad::Var unsup_loss(const ad::Var& pred_u, const PseudoMask& pseudo, double weight);

/// Expected mixed prediction lambda * onehot(mask) + (1 - lambda) * probs.
Tensor mixed_target(const Tensor& unlabeled_probs, const Mask& labeled_mask, double lambda);

}  // namespace gmx
