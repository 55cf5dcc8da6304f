#include "gmx/evalkit.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace gmx {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0 || classes >= kIgnore) throw Error(Errc::InvalidConfig, "confusion matrix needs 1..254 classes");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw Error(Errc::ShapeMismatch, "cannot merge confusion matrices of different size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

void accumulate(ConfusionMatrix& conf, std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                std::uint8_t ignore_index) {
  if (pred.size() != gt.size()) throw Error(Errc::ShapeMismatch, "prediction and ground truth differ in size");
  const std::size_t classes = conf.classes_;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_index) continue;
    if (gt[i] >= classes || pred[i] >= classes) {
      throw Error(Errc::InvalidClass, "pixel " + std::to_string(i) + " has class outside [0," + std::to_string(classes) + ")");
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_index) continue;
    ++conf.counts_[gt[i] * classes + pred[i]];
  }
}

void accumulate(ConfusionMatrix& conf, const Mask& pred, const Mask& gt, std::uint8_t ignore_index) {
  if (pred.height != gt.height || pred.width != gt.width) throw Error(Errc::ShapeMismatch, "mask sizes differ");
  accumulate(conf, pred.labels, gt.labels, ignore_index);
}

MiouResult miou(const ConfusionMatrix& conf) {
  if (conf.total() == 0) throw Error(Errc::EmptyEvaluation, "confusion matrix is empty");
  const std::size_t n = conf.classes();
  MiouResult result;
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += conf.at(c, k);
      col += conf.at(k, c);
    }
    const std::uint64_t inter = conf.at(c, c);
    const std::uint64_t uni = row + col - inter;
    if (uni == 0) {
      result.per_class.emplace_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    result.per_class.emplace_back(iou);
    sum += iou;
    ++defined;
  }
  result.mean = sum / static_cast<double>(defined);
  return result;
}

Mask argmax_labels(const Tensor& probs) {
  PseudoMask view;
  view.soft = probs;
  return view.labels();
}

Tensor predict(SegModel& model, const Tensor& image) {
  ad::Graph graph;
  BoundModel bound(model, graph, false);
  return forward_segnet(bound, graph.constant(image)).probs.value();
}

Tensor predict_tta_flip(SegModel& model, const Tensor& image) {
  Tensor plain = predict(model, image);
  Tensor flipped = flip_horizontal(predict(model, flip_horizontal(image)));
  auto p = plain.data();
  const auto f = flipped.data();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.5 * (p[i] + f[i]);
  return plain;
}

ConfusionMatrix evaluate(SegModel& model, std::span<const Sample> samples, bool tta) {
  ConfusionMatrix conf(model.config().num_classes);
  for (const auto& s : samples) {
    const Tensor probs = tta ? predict_tta_flip(model, s.image) : predict(model, s.image);
    accumulate(conf, argmax_labels(probs), s.mask);
  }
  return conf;
}

MixedPredictor model_mixed_predictor(SegModel& model, const MixConfig& mix) {
  const bool use_mitrans = mix.use_mitrans;
  return [&model, use_mitrans](const MixRecord& record, const Sample& labeled, const Sample&) {
    ad::Graph graph;
    BoundModel bound(model, graph, false);
    std::optional<ad::Var> reference;
    if (use_mitrans) reference = forward_segnet(bound, graph.constant(labeled.image)).coarse;
    return forward_segnet(bound, graph.constant(record.mixed_image), reference).probs.value();
  };
}

double pseudo_mask_quality(const MixedPredictor& predictor, std::span<const Sample> labeled,
                           std::span<const Sample> unlabeled, const MixConfig& mix, std::uint64_t seed) {
  if (unlabeled.empty()) throw Error(Errc::EmptyEvaluation, "no unlabeled entries to score");
  if (labeled.empty()) throw Error(Errc::EmptyBatch, "no labeled partners available");
  mix.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, labeled.size() - 1);
  std::optional<ConfusionMatrix> conf;
  for (std::size_t u = 0; u < unlabeled.size(); ++u) {
    MixRecord record;
    record.labeled_idx = pick(rng);
    record.unlabeled_idx = u;
    record.lambda = sample_lambda(rng, mix.lambda_max);
    const Sample& partner = labeled[record.labeled_idx];
    record.mixed_image = mix_inputs(partner.image, unlabeled[u].image, record.lambda);
    record.labeled_mask = partner.mask;
    const Tensor mixed = predictor(record, partner, unlabeled[u]);
    if (!conf) conf.emplace(mixed.dim(0));
    const Mask pseudo = decouple_soft(mixed, partner.mask, record.lambda).labels();
    accumulate(*conf, pseudo, unlabeled[u].mask);
  }
  return miou(*conf).mean;
}

double pseudo_mask_quality(SegModel& model, const DatasetManifest& manifest, const MixConfig& mix, std::uint64_t seed) {
  const auto labeled = load_split(manifest, Split::Labeled, true);
  const auto unlabeled = load_split(manifest, Split::Unlabeled, true);
  return pseudo_mask_quality(model_mixed_predictor(model, mix), labeled, unlabeled, mix, seed);
}

std::string format_report(const MiouResult& result, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << "class,iou\n";
  char buf[64];
  for (std::size_t c = 0; c < result.per_class.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    if (result.per_class[c]) {
      std::snprintf(buf, sizeof buf, "%.17g", *result.per_class[c]);
      out << name << ',' << buf << '\n';
    } else {
      out << name << ",nan\n";
    }
  }
  std::snprintf(buf, sizeof buf, "%.17g", result.mean);
  out << "mean," << buf << '\n';
  return out.str();
}

namespace {

void class_color(std::size_t label, std::size_t classes, double rgb[3]) {
  static const double palette[][3] = {{0.0, 0.0, 0.0}, {0.90, 0.20, 0.20}, {0.20, 0.80, 0.20},
                                      {0.25, 0.35, 0.95}, {0.95, 0.85, 0.20}, {0.80, 0.30, 0.85}};
  if (label == kIgnore) {
    rgb[0] = rgb[1] = rgb[2] = 1.0;
    return;
  }
  if (label < std::size(palette)) {
    for (int c = 0; c < 3; ++c) rgb[c] = palette[label][c];
    return;
  }
  const double t = static_cast<double>(label) / static_cast<double>(classes);
  rgb[0] = t;
  rgb[1] = 1.0 - t;
  rgb[2] = 0.5;
}

}  // namespace

Tensor render_comparison(std::span<const Sample> samples, std::span<const Mask> predictions, std::size_t classes) {
  if (samples.empty() || samples.size() != predictions.size()) {
    throw Error(Errc::EmptyEvaluation, "render needs one prediction per sample");
  }
  const std::size_t h = samples.front().image.dim(1), w = samples.front().image.dim(2);
  constexpr std::size_t gap = 2;
  Tensor out = Tensor::constant({3, samples.size() * (h + gap), 3 * w + 2 * gap}, 1.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t top = i * (h + gap);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double gt[3], pr[3];
        class_color(samples[i].mask.at(y, x), classes, gt);
        class_color(predictions[i].at(y, x), classes, pr);
        for (std::size_t c = 0; c < 3; ++c) {
          out.at(c, top + y, x) = samples[i].image.at(c, y, x);
          out.at(c, top + y, w + gap + x) = gt[c];
          out.at(c, top + y, 2 * (w + gap) + x) = pr[c];
        }
      }
    }
  }
  return out;
}

}  // namespace gmx
