#include "gmx/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "gmx/evalkit.hpp"
#include "gmx/gradcheck.hpp"
#include "gmx/guidedmix.hpp"
#include "gmx/layers.hpp"
#include "gmx/model.hpp"
#include "gmx/trainer.hpp"

namespace gmx {

namespace {

using ad::Graph;
using ad::Var;

constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

Tensor normal(Shape shape, std::mt19937_64& rng, double mean = 0.0, double stddev = 1.0) {
  std::normal_distribution<double> dist(mean, stddev);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// sum(v * w) with fixed random weights, so every output element matters.
Var project(Graph& g, const Var& v, const Tensor& w) { return ad::sum(ad::mul(v, g.constant(w))); }

struct OpCase {
  std::string name;
  // Builds inputs and the scalar function for one seed.
  std::function<void(std::mt19937_64&, std::vector<Tensor>&, std::function<Var(Graph&, std::vector<Var>&)>&)> make;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto unary = [&cases](std::string name, Shape shape, double lo, double hi, std::function<Var(const Var&)> op) {
    cases.push_back({name, [shape, lo, hi, op](std::mt19937_64& rng, std::vector<Tensor>& in, auto& fn) {
                       in.push_back(lo < hi ? uniform(shape, rng, lo, hi) : normal(shape, rng));
                       Graph tmp;
                       const Shape out_shape = op(tmp.constant(in[0])).shape();
                       Tensor w = normal(out_shape, rng);
                       fn = [op, w](Graph& g, std::vector<Var>& v) { return project(g, op(v[0]), w); };
                     }});
  };
  auto binary = [&cases](std::string name, Shape sa, Shape sb, std::function<Var(const Var&, const Var&)> op) {
    cases.push_back({name, [sa, sb, op](std::mt19937_64& rng, std::vector<Tensor>& in, auto& fn) {
                       in.push_back(normal(sa, rng));
                       in.push_back(normal(sb, rng));
                       Graph tmp;
                       const Shape out_shape = op(tmp.constant(in[0]), tmp.constant(in[1])).shape();
                       Tensor w = normal(out_shape, rng);
                       fn = [op, w](Graph& g, std::vector<Var>& v) { return project(g, op(v[0], v[1]), w); };
                     }});
  };

  binary("add", {3, 4}, {3, 4}, [](const Var& a, const Var& b) { return a + b; });
  binary("sub", {3, 4}, {3, 4}, [](const Var& a, const Var& b) { return a - b; });
  binary("mul", {3, 4}, {3, 4}, [](const Var& a, const Var& b) { return a * b; });
  binary("matmul", {3, 4}, {4, 5}, [](const Var& a, const Var& b) { return ad::matmul(a, b); });
  binary("concat", {2, 3, 3}, {1, 3, 3}, [](const Var& a, const Var& b) { return ad::concat({a, b}); });
  unary("scale", {3, 4}, 0, 0, [](const Var& a) { return ad::scale(a, -2.5); });
  unary("add_scalar", {3, 4}, 0, 0, [](const Var& a) { return ad::add_scalar(a, 0.75); });
  unary("relu", {3, 4}, 0, 0, [](const Var& a) { return ad::relu(a); });
  unary("exp", {3, 4}, 0, 0, [](const Var& a) { return ad::exp(a); });
  unary("log", {3, 4}, 0.2, 3.0, [](const Var& a) { return ad::log(a); });
  unary("clamp_min", {3, 4}, 0, 0, [](const Var& a) { return ad::clamp_min(a, 0.1); });
  unary("transpose", {3, 5}, 0, 0, [](const Var& a) { return ad::transpose(a); });
  unary("reshape", {2, 3, 4}, 0, 0, [](const Var& a) { return ad::reshape(a, {6, 4}); });
  unary("softmax_axis0", {4, 3, 3}, 0, 0, [](const Var& a) { return ad::softmax(a, 0); });
  unary("softmax_axis1", {3, 5}, 0, 0, [](const Var& a) { return ad::softmax(a, 1); });
  unary("sum", {3, 4}, 0, 0, [](const Var& a) { return ad::sum(a); });
  unary("mean", {3, 4}, 0, 0, [](const Var& a) { return ad::mean(a); });
  unary("pixel_shuffle", {8, 3, 3}, 0, 0, [](const Var& a) { return nn::pixel_shuffle(a, 2); });
  unary("adaptive_avg_pool", {2, 5, 5}, 0, 0, [](const Var& a) { return nn::adaptive_avg_pool(a, 3); });
  unary("upsample_nearest", {2, 3, 3}, 0, 0, [](const Var& a) { return nn::upsample_nearest(a, 7, 7); });
  unary("pyramid_pool", {2, 6, 6}, 0, 0, [](const Var& a) {
    const std::size_t bins[] = {1, 2, 3};
    return nn::pyramid_pool(a, bins);
  });
  unary("global_avg_pool", {3, 4, 4}, 0, 0, [](const Var& a) { return nn::global_avg_pool(a); });

  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t k : {1u, 3u}) {
      const std::string name = "conv2d_k" + std::to_string(k) + "_s" + std::to_string(stride);
      cases.push_back({name, [stride, k](std::mt19937_64& rng, std::vector<Tensor>& in, auto& fn) {
                         in.push_back(normal({2, 6, 6}, rng));
                         in.push_back(normal({3, 2, k, k}, rng, 0.0, 0.5));
                         in.push_back(normal({3}, rng));
                         const std::size_t out = (6 + stride - 1) / stride;
                         Tensor w = normal({3, out, out}, rng);
                         fn = [stride, w](Graph& g, std::vector<Var>& v) {
                           return project(g, nn::conv2d(v[0], v[1], v[2], stride), w);
                         };
                       }});
    }
  }
  cases.push_back({"linear", [](std::mt19937_64& rng, std::vector<Tensor>& in, auto& fn) {
                     in.push_back(normal({4}, rng));
                     in.push_back(normal({3, 4}, rng));
                     in.push_back(normal({3}, rng));
                     Tensor w = normal({3}, rng);
                     fn = [w](Graph& g, std::vector<Var>& v) { return project(g, nn::linear(v[0], v[1], v[2]), w); };
                   }});
  cases.push_back({"mitrans", [](std::mt19937_64& rng, std::vector<Tensor>& in, auto& fn) {
                     in.push_back(normal({4, 3, 3}, rng));
                     in.push_back(normal({4, 3, 3}, rng));
                     for (int i = 0; i < 3; ++i) in.push_back(normal({2, 4}, rng, 0.0, 0.7));
                     in.push_back(normal({4, 2}, rng, 0.0, 0.7));
                     Tensor w_out = normal({4, 3, 3}, rng);
                     Tensor w_aff = normal({9, 9}, rng);
                     fn = [w_out, w_aff](Graph& g, std::vector<Var>& v) {
                       const auto r = nn::mitrans(v[0], v[1], {v[2], v[3], v[4], v[5]});
                       return project(g, r.output, w_out) + project(g, r.affinity, w_aff);
                     };
                   }});
  cases.push_back({"cross_entropy", [](std::mt19937_64& rng, std::vector<Tensor>& in, auto& fn) {
                     in.push_back(normal({4, 3, 3}, rng));
                     std::vector<std::uint8_t> labels(9);
                     std::uniform_int_distribution<int> cls(0, 4);
                     for (auto& l : labels) {
                       const int c = cls(rng);
                       l = c == 4 ? kIgnore : static_cast<std::uint8_t>(c);
                     }
                     labels[0] = 1;  // at least one counted pixel
                     fn = [labels](Graph&, std::vector<Var>& v) {
                       return nn::cross_entropy(ad::softmax(v[0], 0), labels);
                     };
                   }});
  cases.push_back({"soft_mse", [](std::mt19937_64& rng, std::vector<Tensor>& in, auto& fn) {
                     in.push_back(normal({4, 3, 3}, rng));
                     Tensor target = uniform({4, 3, 3}, rng, 0.0, 1.0);
                     fn = [target](Graph&, std::vector<Var>& v) { return nn::soft_mse(ad::softmax(v[0], 0), target); };
                   }});
  cases.push_back({"bce_with_logits", [](std::mt19937_64& rng, std::vector<Tensor>& in, auto& fn) {
                     in.push_back(normal({5}, rng, 0.0, 2.0));
                     std::vector<double> targets(5);
                     std::bernoulli_distribution coin(0.5);
                     for (auto& t : targets) t = coin(rng) ? 1.0 : 0.0;
                     fn = [targets](Graph&, std::vector<Var>& v) { return nn::bce_with_logits(v[0], targets); };
                   }});
  return cases;
}

class CorruptGuard {
 public:
  explicit CorruptGuard(bool on) : previous_(nn::debug::corrupt_conv_backward()) {
    nn::debug::set_corrupt_conv_backward(on);
  }
  ~CorruptGuard() { nn::debug::set_corrupt_conv_backward(previous_); }

 private:
  bool previous_;
};

}  // namespace

std::vector<CheckResult> verify_op_gradients(const VerifyOptions& options) {
  CorruptGuard guard(options.corrupt_conv_backward);
  std::vector<CheckResult> results;
  for (const auto& op : op_cases()) {
    double worst = 0.0;
    for (std::size_t s = 0; s < options.op_seeds; ++s) {
      std::mt19937_64 rng(derive_seed(0x6772616463686bULL, s));
      std::vector<Tensor> inputs;
      std::function<Var(Graph&, std::vector<Var>&)> fn;
      op.make(rng, inputs, fn);
      std::vector<Tensor*> ptrs;
      for (auto& t : inputs) ptrs.push_back(&t);
      const auto r = grad_check(
          [&](Graph& g) {
            std::vector<Var> vars;
            for (auto& t : inputs) vars.push_back(g.leaf(t));
            return fn(g, vars);
          },
          ptrs);
      worst = std::max(worst, r.max_relative_error);
    }
    results.push_back({"grad." + op.name, worst < kOpTolerance,
                       "max_rel=" + sci(worst) + " seeds=" + std::to_string(options.op_seeds)});
  }
  return results;
}

CheckResult verify_model_gradient(const VerifyOptions& options) {
  CorruptGuard guard(options.corrupt_conv_backward);
  constexpr std::size_t kSeeds = 3;
  constexpr std::size_t kCoords = 10;
  double worst = 0.0;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    std::mt19937_64 rng(derive_seed(0x6d6f64656cULL, s));
    SegModel model(ModelConfig{}, derive_seed(0x6d6f64656cULL, s, 1));
    const Tensor image = uniform({3, 32, 32}, rng, 0.0, 1.0);
    const Tensor partner = uniform({3, 32, 32}, rng, 0.0, 1.0);
    std::vector<std::uint8_t> labels(32 * 32);
    std::uniform_int_distribution<int> cls(0, 3);
    for (auto& l : labels) l = static_cast<std::uint8_t>(cls(rng));
    const std::vector<double> presence{1.0, 0.0, 1.0};

    std::vector<Tensor*> params;
    for (auto& [name, t] : model.params()) params.push_back(&t);
    GradCheckOptions opts;
    opts.sample = kCoords;
    opts.seed = derive_seed(0x6d6f64656cULL, s, 2);
    const auto r = grad_check(
        [&](Graph& g) {
          BoundModel bound(model, g, true);
          const auto ref = forward_segnet(bound, g.constant(partner));
          const auto out = forward_segnet(bound, g.constant(image), ref.coarse);
          const Var cls_loss = nn::bce_with_logits(classifier_head(bound, out.features.pooled), presence);
          return nn::cross_entropy(out.probs, labels) + nn::cross_entropy(ref.probs, labels) + ad::scale(cls_loss, 0.1);
        },
        params, opts);
    worst = std::max(worst, r.max_relative_error);
  }
  return {"grad.model", worst < kModelTolerance,
          "max_rel=" + sci(worst) + " seeds=" + std::to_string(kSeeds) + " coords=" + std::to_string(kCoords)};
}

CheckResult verify_decoupling_inverse() {
  constexpr std::size_t kCases = 1000;
  constexpr double kTol = 1e-12;
  const std::size_t class_options[] = {2, 4, 8};
  std::mt19937_64 rng(0x6465636f75706c65ULL);
  std::uniform_real_distribution<double> lam_dist(0.0, 1.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < kCases; ++i) {
    const std::size_t c = class_options[i % 3];
    double lambda = lam_dist(rng);
    while (lambda == 0.0) lambda = lam_dist(rng);
    Graph g;
    const Tensor pu = ad::softmax(g.constant(normal({c, 4, 4}, rng, 0.0, 2.0)), 0).value();
    Mask mask(4, 4);
    std::uniform_int_distribution<std::size_t> cls(0, c - 1);
    for (auto& l : mask.labels) l = static_cast<std::uint8_t>(cls(rng));
    Tensor mixed = pu;
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t p = 0; p < 16; ++p) {
        mixed[k * 16 + p] = lambda * (mask.labels[p] == k ? 1.0 : 0.0) + (1.0 - lambda) * pu[k * 16 + p];
      }
    }
    const Tensor rec = *decouple_soft(mixed, mask, lambda).soft;
    for (std::size_t j = 0; j < rec.size(); ++j) worst = std::max(worst, std::abs(rec[j] - pu[j]));
  }
  return {"decouple.soft_inverse", worst <= kTol, "max_abs=" + sci(worst) + " cases=" + std::to_string(kCases)};
}

std::vector<CheckResult> verify_mitrans() {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(0x6d697472616e73ULL);

  double row_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    const auto r = nn::mitrans(g.constant(normal({8, 4, 4}, rng)), g.constant(normal({8, 4, 4}, rng)),
                               {g.constant(normal({4, 8}, rng)), g.constant(normal({4, 8}, rng)),
                                g.constant(normal({4, 8}, rng)), g.constant(normal({8, 4}, rng))});
    const Tensor& a = r.affinity.value();
    const std::size_t n = a.dim(0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (a[i * n + j] < 0.0) row_err = std::max(row_err, 1.0);
        s += a[i * n + j];
      }
      row_err = std::max(row_err, std::abs(s - 1.0));
    }
  }
  out.push_back({"mitrans.affinity_rows", row_err <= 1e-9, "max_row_err=" + sci(row_err)});

  {
    Graph g;
    const Tensor x = normal({8, 4, 4}, rng);
    const auto r = nn::mitrans(g.constant(x), g.constant(normal({8, 4, 4}, rng)),
                               {g.constant(normal({4, 8}, rng)), g.constant(normal({4, 8}, rng)),
                                g.constant(normal({4, 8}, rng)), g.constant(Tensor::zeros({8, 4}))});
    const bool same = r.output.value().storage() == x.storage();
    out.push_back({"mitrans.zero_output_identity", same, same ? "exact" : "output differs from input"});
  }

  {
    // Explicit loops over a 2x2 map with C=3, d=2.
    const std::size_t C = 3, D = 2, N = 4;
    Graph g;
    const Tensor x = normal({C, 2, 2}, rng), ref = normal({C, 2, 2}, rng);
    const Tensor wq = normal({D, C}, rng), wk = normal({D, C}, rng), wv = normal({D, C}, rng), wo = normal({C, D}, rng);
    const auto r = nn::mitrans(g.constant(x), g.constant(ref),
                               {g.constant(wq), g.constant(wk), g.constant(wv), g.constant(wo)});
    auto proj = [&](const Tensor& w, const Tensor& f, std::size_t d, std::size_t p) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += w[d * C + c] * f[c * N + p];
      return s;
    };
    double err = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double logits[N], mx = -INFINITY;
      for (std::size_t j = 0; j < N; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < D; ++d) s += proj(wq, x, d, i) * proj(wk, ref, d, j);
        logits[j] = s / std::sqrt(static_cast<double>(D));
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0, attn[N];
      for (std::size_t j = 0; j < N; ++j) z += (attn[j] = std::exp(logits[j] - mx));
      for (std::size_t j = 0; j < N; ++j) {
        attn[j] /= z;
        err = std::max(err, std::abs(attn[j] - r.affinity.value()[i * N + j]));
      }
      for (std::size_t c = 0; c < C; ++c) {
        double v = x[c * N + i];
        for (std::size_t d = 0; d < D; ++d) {
          double ctx = 0.0;
          for (std::size_t j = 0; j < N; ++j) ctx += attn[j] * proj(wv, ref, d, j);
          v += wo[c * D + d] * ctx;
        }
        err = std::max(err, std::abs(v - r.output.value()[c * N + i]));
      }
    }
    out.push_back({"mitrans.loop_oracle_2x2", err <= 1e-10, "max_abs=" + sci(err)});
  }
  return out;
}

std::vector<CheckResult> verify_miou() {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(0x6d696f75ULL);
  std::size_t mismatches = 0;
  constexpr std::size_t kPairs = 100;
  for (std::size_t trial = 0; trial < kPairs; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 16), ncls(1, 5);
    const std::size_t h = dim(rng), w = dim(rng), c = ncls(rng);
    std::uniform_int_distribution<int> lab(0, static_cast<int>(c));  // c stands for ignore
    Mask pred(h, w), gt(h, w);
    for (std::size_t p = 0; p < h * w; ++p) {
      pred.labels[p] = static_cast<std::uint8_t>(lab(rng) % static_cast<int>(c));
      const int g = lab(rng);
      gt.labels[p] = g == static_cast<int>(c) ? kIgnore : static_cast<std::uint8_t>(g);
    }
    gt.labels[0] = 0;

    ConfusionMatrix conf(c);
    accumulate(conf, pred, gt);
    const MiouResult got = miou(conf);

    // Set-based: per class, count pixels in (pred ∩ gt) and (pred ∪ gt) over non-ignored pixels.
    double sum = 0.0;
    std::size_t defined = 0;
    bool per_class_ok = true;
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t p = 0; p < h * w; ++p) {
        if (gt.labels[p] == kIgnore) continue;
        const bool in_p = pred.labels[p] == k, in_g = gt.labels[p] == k;
        inter += in_p && in_g;
        uni += in_p || in_g;
      }
      if (uni == 0) {
        per_class_ok = per_class_ok && !got.per_class[k].has_value();
        continue;
      }
      const double iou = static_cast<double>(inter) / static_cast<double>(uni);
      per_class_ok = per_class_ok && got.per_class[k] && *got.per_class[k] == iou;
      sum += iou;
      ++defined;
    }
    if (!per_class_ok || got.mean != sum / static_cast<double>(defined)) ++mismatches;
  }
  out.push_back({"miou.oracle", mismatches == 0,
                 "mismatches=" + std::to_string(mismatches) + "/" + std::to_string(kPairs)});

  ConfusionMatrix conf(2);
  const std::uint8_t gt[] = {0, 0, 1, 1}, pred[] = {0, 1, 1, 1};
  accumulate(conf, pred, gt);
  const double m = miou(conf).mean;
  out.push_back({"miou.worked_example", std::abs(m - 7.0 / 12.0) <= 1e-15, "mean=" + sci(m)});
  return out;
}

CheckResult verify_pixel_shuffle() {
  constexpr std::size_t C = 3, r = 2, H = 3, W = 4;
  Tensor input = Tensor::zeros({C * r * r, H, W});
  for (std::size_t i = 0; i < input.size(); ++i) input[i] = static_cast<double>(i);
  input.set_requires_grad(true);
  Graph g;
  const Var out = nn::pixel_shuffle(g.leaf(input), r);
  bool ok = out.shape() == Shape{C, H * r, W * r};
  const Tensor y = out.value();
  std::vector<bool> seen(input.size(), false);
  for (std::size_t c = 0; c < C && ok; ++c) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < r; ++j) {
            const double v = y.at(c, h * r + i, w * r + j);
            const std::size_t src = ((c * r * r + i * r + j) * H + h) * W + w;
            ok = ok && v == static_cast<double>(src);
            if (src < seen.size()) seen[src] = true;
          }
        }
      }
    }
  }
  ok = ok && std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
  // The backward pass must route each gradient to its source.
  Tensor weights = Tensor::zeros(y.shape());
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = y[i] * 10.0 + 1.0;
  g.backward(project(g, out, weights));
  for (std::size_t i = 0; i < input.size() && ok; ++i) ok = input.grad()[i] == input[i] * 10.0 + 1.0;
  return {"pixel_shuffle.permutation", ok, ok ? "bijective, backward inverse" : "mapping mismatch"};
}

CheckResult verify_poly_lr() {
  const double at0 = poly_lr(1e-3, 0, 4000, 0.9);
  const double at_end = poly_lr(1e-3, 4000, 4000, 0.9);
  const double at_mid = poly_lr(1e-3, 2000, 4000, 0.9);
  const double err = std::max({std::abs(at0 - 1e-3), std::abs(at_end), std::abs(at_mid - 1e-3 * std::pow(0.5, 0.9))});
  return {"poly_lr.exact", err <= 1e-12, "max_abs=" + sci(err)};
}

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<std::string> VerifyReport::failures() const {
  std::vector<std::string> names;
  for (const auto& c : checks) {
    if (!c.passed) names.push_back(c.name);
  }
  return names;
}

std::string VerifyReport::format() const {
  std::string out;
  std::size_t ok = 0;
  for (const auto& c : checks) {
    out += (c.passed ? "PASS " : "FAIL ") + c.name + " " + c.detail + "\n";
    ok += c.passed;
  }
  out += std::to_string(ok) + "/" + std::to_string(checks.size()) + " checks passed\n";
  return out;
}

VerifyReport run_verify(const VerifyOptions& options) {
  VerifyReport report;
  auto add = [&report](std::vector<CheckResult> more) {
    report.checks.insert(report.checks.end(), more.begin(), more.end());
  };
  add(verify_op_gradients(options));
  add({verify_model_gradient(options)});
  add({verify_decoupling_inverse()});
  add(verify_mitrans());
  add(verify_miou());
  add({verify_pixel_shuffle()});
  add({verify_poly_lr()});
  return report;
}

}  // namespace gmx
