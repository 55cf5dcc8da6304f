#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gmx/autodiff.hpp"
#include "gmx/mask.hpp"

namespace gmx::nn {

using ad::Var;

/// Cross-correlation of input [Cin,H,W] with weight [Cout,Cin,k,k] plus
/// bias [Cout]. Kernel size must be odd; padding is (k-1)/2.
Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride);

/// [C*r*r, H, W] -> [C, H*r, W*r] with out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w].
Var pixel_shuffle(const Var& input, std::size_t r);

/// Adaptive average pooling of [C,H,W] to [C,b,b]. Bin i covers rows
/// [floor(i*H/b), ceil((i+1)*H/b)).
Var adaptive_avg_pool(const Var& input, std::size_t bins);

/// Nearest-neighbour resize of [C,h,w] to [C,H,W]; source row = floor(y*h/H).
Var upsample_nearest(const Var& input, std::size_t height, std::size_t width);

/// Pyramid pooling without per-branch projections: concatenates the input
/// with one pooled-and-upsampled copy per bin, giving C*(1+bins) channels.
Var pyramid_pool(const Var& fmap, std::span<const std::size_t> bins);

/// [C,H,W] -> [C]
Var global_avg_pool(const Var& input);

/// weight [out,in] * x [in] + bias [out]
Var linear(const Var& x, const Var& weight, const Var& bias);

struct MITransWeights {
  Var query;   // [d_e, C]
  Var key;     // [d_e, C]
  Var value;   // [d_e, C]
  Var output;  // [C, d_e]
};

struct MITransResult {
  Var output;    // [C,h,w]
  Var affinity;  // [h*w, h*w], rows index coarse positions
};

/// Non-local transfer from `reference` into `coarse`:
///   A = softmax_rows((Wq X)^T (Wk R) / sqrt(d_e)),  out = X + Wo (Wv R) A^T.
MITransResult mitrans(const Var& coarse, const Var& reference, const MITransWeights& weights);

/// Mean over non-ignored pixels of -log p(label). `probs` is [C,H,W].
/// Returns a zero scalar when every pixel is ignored.
Var cross_entropy(const Var& probs, std::span<const std::uint8_t> labels);

/// Mean over pixels of sum_c (pred - target)^2; the target is a constant.
Var soft_mse(const Var& pred, const Tensor& target);

/// Mean binary cross-entropy with logits over a vector.
Var bce_with_logits(const Var& logits, std::span<const double> targets);

namespace debug {
/// Negative-control hook: perturbs the conv2d weight gradient.
void set_corrupt_conv_backward(bool on);
bool corrupt_conv_backward();
}  // namespace debug

}  // namespace gmx::nn
