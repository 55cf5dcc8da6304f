#include "gmx/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <memory>
#include <cmath>

namespace gmx::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::atomic<bool> g_corrupt_conv{false};

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                         shape_string(v.shape()));
  }
}

struct ConvGeometry {
  std::size_t cin, h, w, k, stride, pad, ho, wo;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return ho * wo; }
};

void im2col(const ConvGeometry& g, const double* in, double* col) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.wo + ox] = inside ? in[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, std::span<double> in_grad) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            in_grad[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

namespace debug {
void set_corrupt_conv_backward(bool on) { g_corrupt_conv = on; }
bool corrupt_conv_backward() { return g_corrupt_conv; }
}  // namespace debug

Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride) {
  require_rank(input, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  const auto& ws = weight.shape();
  const std::size_t cout = ws[0], k = ws[2];
  if (ws[1] != input.shape()[0]) {
    throw Error(Errc::ShapeMismatch, "conv2d: weight " + shape_string(ws) + " vs input " + shape_string(input.shape()));
  }
  if (ws[3] != k || k % 2 == 0) throw Error(Errc::InvalidShape, "conv2d: kernel must be square and odd");
  if (bias.shape()[0] != cout) throw Error(Errc::ShapeMismatch, "conv2d: bias length mismatch");
  if (stride == 0) throw Error(Errc::InvalidShape, "conv2d: stride must be positive");

  ConvGeometry g{input.shape()[0], input.shape()[1], input.shape()[2], k, stride, (k - 1) / 2, 0, 0};
  g.ho = (g.h + 2 * g.pad - k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - k) / stride + 1;

  auto col = std::make_shared<Buffer>(g.rows() * g.cols());
  im2col(g, input.value().data().data(), col->data());

  Tensor out = Tensor::zeros({cout, g.ho, g.wo});
  MapMat y(out.data().data(), cout, g.cols());
  y.noalias() = ConstMapMat(weight.value().data().data(), cout, g.rows()) * ConstMapMat(col->data(), g.rows(), g.cols());
  const auto b = bias.value().data();
  for (std::size_t o = 0; o < cout; ++o) y.row(o).array() += b[o];

  return input.graph().record(
      "conv2d", std::move(out), {input, weight, bias},
      [input, weight, bias, g, cout, col](ad::Graph& graph, std::span<const double> go) {
        ConstMapMat dy(go.data(), cout, g.cols());
        if (auto gw = graph.grad_sink(weight); !gw.empty()) {
          MapMat dw(gw.data(), cout, g.rows());
          if (g_corrupt_conv) {
            dw.noalias() += 1.5 * (dy * ConstMapMat(col->data(), g.rows(), g.cols()).transpose());
          } else {
            dw.noalias() += dy * ConstMapMat(col->data(), g.rows(), g.cols()).transpose();
          }
        }
        if (auto gb = graph.grad_sink(bias); !gb.empty()) {
          for (std::size_t o = 0; o < cout; ++o) gb[o] += dy.row(o).sum();
        }
        if (auto gi = graph.grad_sink(input); !gi.empty()) {
          RowMat dcol = ConstMapMat(weight.value().data().data(), cout, g.rows()).transpose() * dy;
          col2im_add(g, dcol.data(), gi);
        }
      });
}

Var pixel_shuffle(const Var& input, std::size_t r) {
  require_rank(input, 3, "pixel_shuffle");
  if (r == 0) throw Error(Errc::InvalidShape, "pixel_shuffle: factor must be positive");
  const std::size_t cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  if (cin % (r * r) != 0) {
    throw Error(Errc::ShapeMismatch, "pixel_shuffle: " + std::to_string(cin) + " channels not divisible by r^2=" +
                                         std::to_string(r * r));
  }
  const std::size_t c = cin / (r * r), oh = h * r, ow = w * r;
  // gather[o] is the input index feeding output index o.
  std::vector<std::size_t> gather(cin * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < r; ++j)
            gather[(ch * oh + y * r + i) * ow + x * r + j] = ((ch * r * r + i * r + j) * h + y) * w + x;

  Tensor out = Tensor::zeros({c, oh, ow});
  const auto in = input.value().data();
  auto o = out.data();
  for (std::size_t idx = 0; idx < o.size(); ++idx) o[idx] = in[gather[idx]];
  return input.graph().record("pixel_shuffle", std::move(out), {input},
                              [input, gather = std::move(gather)](ad::Graph& g, std::span<const double> go) {
                                auto gi = g.grad_sink(input);
                                for (std::size_t idx = 0; idx < go.size(); ++idx) gi[gather[idx]] += go[idx];
                              });
}

Var adaptive_avg_pool(const Var& input, std::size_t bins) {
  require_rank(input, 3, "adaptive_avg_pool");
  const std::size_t c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  if (bins == 0 || bins > h || bins > w) {
    throw Error(Errc::InvalidShape, "adaptive_avg_pool: bin " + std::to_string(bins) + " exceeds " + shape_string(input.shape()));
  }
  auto start = [](std::size_t i, std::size_t n, std::size_t b) { return (i * n) / b; };
  auto stop = [](std::size_t i, std::size_t n, std::size_t b) { return ((i + 1) * n + b - 1) / b; };

  Tensor out = Tensor::zeros({c, bins, bins});
  const auto& x = input.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t by = 0; by < bins; ++by) {
      for (std::size_t bx = 0; bx < bins; ++bx) {
        double total = 0.0;
        const std::size_t y0 = start(by, h, bins), y1 = stop(by, h, bins);
        const std::size_t x0 = start(bx, w, bins), x1 = stop(bx, w, bins);
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) total += x.at(ch, y, xx);
        out.at(ch, by, bx) = total / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return input.graph().record(
      "adaptive_avg_pool", std::move(out), {input},
      [input, bins, c, h, w, start, stop](ad::Graph& g, std::span<const double> go) {
        auto gi = g.grad_sink(input);
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t by = 0; by < bins; ++by) {
            for (std::size_t bx = 0; bx < bins; ++bx) {
              const std::size_t y0 = start(by, h, bins), y1 = stop(by, h, bins);
              const std::size_t x0 = start(bx, w, bins), x1 = stop(bx, w, bins);
              const double share = go[(ch * bins + by) * bins + bx] / static_cast<double>((y1 - y0) * (x1 - x0));
              for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t xx = x0; xx < x1; ++xx) gi[(ch * h + y) * w + xx] += share;
            }
          }
        }
      });
}

Var upsample_nearest(const Var& input, std::size_t height, std::size_t width) {
  require_rank(input, 3, "upsample_nearest");
  const std::size_t c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  std::vector<std::size_t> gather(c * height * width);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        gather[(ch * height + y) * width + x] = (ch * h + (y * h) / height) * w + (x * w) / width;
  Tensor out = Tensor::zeros({c, height, width});
  const auto in = input.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[gather[i]];
  return input.graph().record("upsample_nearest", std::move(out), {input},
                              [input, gather = std::move(gather)](ad::Graph& g, std::span<const double> go) {
                                auto gi = g.grad_sink(input);
                                for (std::size_t i = 0; i < go.size(); ++i) gi[gather[i]] += go[i];
                              });
}

Var pyramid_pool(const Var& fmap, std::span<const std::size_t> bins) {
  require_rank(fmap, 3, "pyramid_pool");
  const std::size_t h = fmap.shape()[1], w = fmap.shape()[2];
  std::vector<Var> parts{fmap};
  for (std::size_t b : bins) parts.push_back(upsample_nearest(adaptive_avg_pool(fmap, b), h, w));
  return ad::concat(parts);
}

Var global_avg_pool(const Var& input) {
  require_rank(input, 3, "global_avg_pool");
  const std::size_t c = input.shape()[0], hw = input.shape()[1] * input.shape()[2];
  Tensor out = Tensor::zeros({c});
  const auto x = input.value().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double total = 0.0;
    for (std::size_t i = 0; i < hw; ++i) total += x[ch * hw + i];
    out[ch] = total / static_cast<double>(hw);
  }
  return input.graph().record("global_avg_pool", std::move(out), {input},
                              [input, c, hw](ad::Graph& g, std::span<const double> go) {
                                auto gi = g.grad_sink(input);
                                for (std::size_t ch = 0; ch < c; ++ch)
                                  for (std::size_t i = 0; i < hw; ++i) gi[ch * hw + i] += go[ch] / static_cast<double>(hw);
                              });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 1, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t out = weight.shape()[0];
  Var y = ad::matmul(weight, ad::reshape(x, {x.size(), 1}));
  return ad::add(ad::reshape(y, {out}), bias);
}

MITransResult mitrans(const Var& coarse, const Var& reference, const MITransWeights& weights) {
  require_rank(coarse, 3, "mitrans coarse");
  if (coarse.shape() != reference.shape()) {
    throw Error(Errc::ShapeMismatch, "mitrans: coarse " + shape_string(coarse.shape()) + " vs reference " +
                                         shape_string(reference.shape()));
  }
  const std::size_t c = coarse.shape()[0], n = coarse.shape()[1] * coarse.shape()[2];
  const std::size_t embed = weights.query.shape().at(0);
  Var x = ad::reshape(coarse, {c, n});
  Var r = ad::reshape(reference, {c, n});
  Var q = ad::matmul(weights.query, x);
  Var k = ad::matmul(weights.key, r);
  Var v = ad::matmul(weights.value, r);
  Var scores = ad::scale(ad::matmul(ad::transpose(q), k), 1.0 / std::sqrt(static_cast<double>(embed)));
  Var affinity = ad::softmax(scores, 1);
  Var transfer = ad::matmul(weights.output, ad::matmul(v, ad::transpose(affinity)));
  Var out = ad::reshape(ad::add(x, transfer), coarse.shape());
  return {out, affinity};
}

Var cross_entropy(const Var& probs, std::span<const std::uint8_t> labels) {
  require_rank(probs, 3, "cross_entropy");
  const std::size_t classes = probs.shape()[0], pixels = probs.shape()[1] * probs.shape()[2];
  if (labels.size() != pixels) throw Error(Errc::ShapeMismatch, "cross_entropy: label count mismatch");
  static constexpr double kFloor = 1e-12;
  const auto p = probs.value().data();
  std::vector<std::uint32_t> used;
  double total = 0.0;
  for (std::size_t i = 0; i < pixels; ++i) {
    if (labels[i] == kIgnore) continue;
    if (labels[i] >= classes) throw Error(Errc::InvalidClass, "cross_entropy: label " + std::to_string(labels[i]));
    total -= std::log(std::max(p[labels[i] * pixels + i], kFloor));
    used.push_back(static_cast<std::uint32_t>(i));
  }
  if (used.empty()) return probs.graph().constant(Tensor::zeros({1}));
  const double count = static_cast<double>(used.size());
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  return probs.graph().record(
      "cross_entropy", Tensor::constant({1}, total / count), {probs},
      [probs, used = std::move(used), lab = std::move(lab), pixels, count](ad::Graph& g, std::span<const double> go) {
        auto gp = g.grad_sink(probs);
        const auto p = probs.value().data();
        for (auto i : used) {
          const std::size_t idx = lab[i] * pixels + i;
          gp[idx] -= go[0] / (count * std::max(p[idx], kFloor));
        }
      });
}

Var soft_mse(const Var& pred, const Tensor& target) {
  require_rank(pred, 3, "soft_mse");
  if (pred.shape() != target.shape()) {
    throw Error(Errc::ShapeMismatch, "soft_mse: " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  }
  const double pixels = static_cast<double>(pred.shape()[1] * pred.shape()[2]);
  const auto p = pred.value().data();
  const auto t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
  return pred.graph().record("soft_mse", Tensor::constant({1}, total / pixels), {pred},
                             [pred, target, pixels](ad::Graph& g, std::span<const double> go) {
                               auto gp = g.grad_sink(pred);
                               const auto p = pred.value().data();
                               const auto t = target.data();
                               for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[0] * 2.0 * (p[i] - t[i]) / pixels;
                             });
}

Var bce_with_logits(const Var& logits, std::span<const double> targets) {
  require_rank(logits, 1, "bce_with_logits");
  if (logits.size() != targets.size()) throw Error(Errc::ShapeMismatch, "bce_with_logits: target length mismatch");
  const auto z = logits.value().data();
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    // max(z,0) - z*t + log(1 + exp(-|z|))
    total += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  std::vector<double> t(targets.begin(), targets.end());
  return logits.graph().record("bce_with_logits", Tensor::constant({1}, total / n), {logits},
                               [logits, t = std::move(t), n](ad::Graph& g, std::span<const double> go) {
                                 auto gl = g.grad_sink(logits);
                                 const auto z = logits.value().data();
                                 for (std::size_t i = 0; i < gl.size(); ++i) {
                                   const double sig = 1.0 / (1.0 + std::exp(-z[i]));
                                   gl[i] += go[0] * (sig - t[i]) / n;
                                 }
                               });
}

}  // namespace gmx::nn
