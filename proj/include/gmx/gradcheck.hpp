#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "gmx/autodiff.hpp"

namespace gmx {

struct GradCheckOptions {
  double eps = 1e-5;
  /// When set, only this many coordinates (drawn without replacement across
  /// all inputs) are probed.
  std::optional<std::size_t> sample = std::nullopt;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t coordinates = 0;
};

/// Builds a scalar on a fresh graph; must bind its inputs with Graph::leaf.
using ScalarFn = std::function<ad::Var(ad::Graph&)>;

/// Compares the reverse-mode gradient of `f` with respect to `inputs`
/// against central differences. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor*>& inputs, const GradCheckOptions& options = {});

}  // namespace gmx
