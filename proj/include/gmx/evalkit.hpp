#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmx/dataio.hpp"
#include "gmx/guidedmix.hpp"
#include "gmx/mask.hpp"
#include "gmx/model.hpp"

namespace gmx {

/// counts[gt][pred] over non-ignored pixels.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  friend void accumulate(ConfusionMatrix&, std::span<const std::uint8_t>, std::span<const std::uint8_t>, std::uint8_t);
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Adds pred/gt pixel pairs; pixels whose gt equals `ignore_index` are skipped.
void accumulate(ConfusionMatrix& conf, std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                std::uint8_t ignore_index = kIgnore);
void accumulate(ConfusionMatrix& conf, const Mask& pred, const Mask& gt, std::uint8_t ignore_index = kIgnore);

struct MiouResult {
  /// nullopt for classes absent from both prediction and ground truth.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

/// Throws EmptyEvaluation when the matrix holds no pixels.
MiouResult miou(const ConfusionMatrix& conf);

Mask argmax_labels(const Tensor& probs);

/// Plain forward of one image; returns [C,H,W] probabilities.
Tensor predict(SegModel& model, const Tensor& image);
/// Mean of the plain prediction and the un-flipped prediction of the flipped image.
Tensor predict_tta_flip(SegModel& model, const Tensor& image);

ConfusionMatrix evaluate(SegModel& model, std::span<const Sample> samples, bool tta);

/// Produces the mixed-image prediction for a record.
using MixedPredictor = std::function<Tensor(const MixRecord&, const Sample& labeled, const Sample& unlabeled)>;

/// Mixed forward used by the trainer: reference features come from the
/// labeled partner when MITrans is enabled.
MixedPredictor model_mixed_predictor(SegModel& model, const MixConfig& mix);

/// Pairs every unlabeled image with a random labeled image, mixes, predicts,
/// soft-decouples, and scores the argmax against the held-out masks.
double pseudo_mask_quality(const MixedPredictor& predictor, std::span<const Sample> labeled,
                           std::span<const Sample> unlabeled, const MixConfig& mix, std::uint64_t seed);
double pseudo_mask_quality(SegModel& model, const DatasetManifest& manifest, const MixConfig& mix, std::uint64_t seed);

/// CSV rows `class,iou` followed by `mean,<value>`.
std::string format_report(const MiouResult& result, const std::vector<std::string>& class_names);

/// One row per sample: image | ground truth | prediction, as a [3,H,3W*] tile.
Tensor render_comparison(std::span<const Sample> samples, std::span<const Mask> predictions, std::size_t classes);

}  // namespace gmx
