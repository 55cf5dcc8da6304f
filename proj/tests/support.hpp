#pragma once
// Shared fixtures and reference implementations for the test suites. The
// reference code here is deliberately naive and independent of src/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gmx/mask.hpp"
#include "gmx/tensor.hpp"

namespace testing {

inline gmx::Tensor random_tensor(gmx::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  gmx::Tensor t = gmx::Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline gmx::Mask random_mask(std::size_t h, std::size_t w, std::size_t classes, std::mt19937_64& rng) {
  gmx::Mask m(h, w);
  std::uniform_int_distribution<std::size_t> d(0, classes - 1);
  for (auto& l : m.labels) l = static_cast<std::uint8_t>(d(rng));
  return m;
}

/// Random simplex field [C,H,W] via exp-normalisation done by hand.
inline gmx::Tensor random_probs(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.5);
  gmx::Tensor t = gmx::Tensor::zeros({c, h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += (t[k * h * w + p] = std::exp(n(rng)));
    for (std::size_t k = 0; k < c; ++k) t[k * h * w + p] /= z;
  }
  return t;
}

inline double max_abs_diff(const gmx::Tensor& a, const gmx::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// [M,K] x [K,N]
inline gmx::Tensor matmul_oracle(const gmx::Tensor& a, const gmx::Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  gmx::Tensor out = gmx::Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i * n + j] += a[i * k + t] * b[t * n + j];
  return out;
}

// Zero-padded cross-correlation, pad (k-1)/2.
inline gmx::Tensor conv_oracle(const gmx::Tensor& x, const gmx::Tensor& w, const gmx::Tensor& b, std::size_t stride) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const long pad = static_cast<long>(k - 1) / 2;
  const std::size_t ho = (h + stride - 1) / stride, wo = (wd + stride - 1) / stride;
  gmx::Tensor out = gmx::Tensor::zeros({cout, ho, wo});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) {
        double s = b[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              const long yy = static_cast<long>(y * stride + i) - pad;
              const long xi = static_cast<long>(xx * stride + j) - pad;
              if (yy < 0 || xi < 0 || yy >= static_cast<long>(h) || xi >= static_cast<long>(wd)) continue;
              s += w[((o * cin + c) * k + i) * k + j] * x[(c * h + yy) * wd + xi];
            }
        out[(o * ho + y) * wo + xx] = s;
      }
  return out;
}

struct AttentionOracle {
  gmx::Tensor output;
  gmx::Tensor affinity;
};

// out = X + Wo (Wv R) A^T with A = softmax_rows((Wq X)^T (Wk R) / sqrt(d)).
inline AttentionOracle attention_oracle(const gmx::Tensor& x, const gmx::Tensor& r, const gmx::Tensor& wq,
                                        const gmx::Tensor& wk, const gmx::Tensor& wv, const gmx::Tensor& wo) {
  const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2), d = wq.dim(0);
  auto proj = [&](const gmx::Tensor& w, const gmx::Tensor& f, std::size_t e, std::size_t p) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += w[e * c + k] * f[k * n + p];
    return s;
  };
  AttentionOracle o{x, gmx::Tensor::zeros({n, n})};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(n);
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t e = 0; e < d; ++e) s += proj(wq, x, e, i) * proj(wk, r, e, j);
      row[j] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, row[j]);
    }
    for (auto& v : row) z += (v = std::exp(v - mx));
    for (std::size_t j = 0; j < n; ++j) o.affinity[i * n + j] = row[j] / z;
    for (std::size_t k = 0; k < c; ++k) {
      double add = 0.0;
      for (std::size_t e = 0; e < d; ++e) {
        double ctx = 0.0;
        for (std::size_t j = 0; j < n; ++j) ctx += o.affinity[i * n + j] * proj(wv, r, e, j);
        add += wo[k * d + e] * ctx;
      }
      o.output[k * n + i] += add;
    }
  }
  return o;
}

/// Per-class IoU from pixel sets; nullopt-like NaN for classes absent from both.
inline std::vector<double> iou_oracle(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                                      std::size_t classes) {
  std::vector<double> out;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t p = 0; p < gt.size(); ++p) {
      if (gt[p] == gmx::kIgnore) continue;
      inter += pred[p] == c && gt[p] == c;
      uni += pred[p] == c || gt[p] == c;
    }
    out.push_back(uni == 0 ? std::nan("") : static_cast<double>(inter) / static_cast<double>(uni));
  }
  return out;
}

/// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / ("gmx_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
