#pragma once

#include <string>
#include <vector>

namespace gmx {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  /// Random inputs per differentiable op.
  std::size_t op_seeds = 20;
  /// Negative control: run the suite with a perturbed conv2d backward.
  bool corrupt_conv_backward = false;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const;
  std::vector<std::string> failures() const;
  /// One `PASS|FAIL name detail` line per check plus a summary line.
  std::string format() const;
};

/// Gradient checks for every differentiable op (max relative error < 1e-4).
std::vector<CheckResult> verify_op_gradients(const VerifyOptions& options);
/// Full model on a 32x32 input, 10 random parameter coordinates per seed
/// (max relative error < 1e-3).
CheckResult verify_model_gradient(const VerifyOptions& options);
CheckResult verify_decoupling_inverse();
std::vector<CheckResult> verify_mitrans();
std::vector<CheckResult> verify_miou();
CheckResult verify_pixel_shuffle();
CheckResult verify_poly_lr();

VerifyReport run_verify(const VerifyOptions& options = {});

}  // namespace gmx
