#include "gmx/tensor.hpp"

#include <cmath>
#include <random>

namespace gmx {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::InvalidShape: return "InvalidShape";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DomainError: return "DomainError";
    case Errc::NotScalar: return "NotScalar";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidDistribution: return "InvalidDistribution";
    case Errc::InvalidIteration: return "InvalidIteration";
    case Errc::StateMismatch: return "StateMismatch";
    case Errc::Diverged: return "Diverged";
    case Errc::Io: return "IoError";
    case Errc::Format: return "FormatError";
    case Errc::InvalidClass: return "InvalidClass";
    case Errc::EmptyEvaluation: return "EmptyEvaluation";
    case Errc::CheckpointMismatch: return "CheckpointMismatch";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

DivergedError::DivergedError(long iteration, const std::string& detail)
    : Error(Errc::Diverged, "iteration " + std::to_string(iteration) + ": " + detail),
      iteration_(iteration) {}

FormatError::FormatError(std::size_t offset, const std::string& detail)
    : Error(Errc::Format, detail + " (byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw Error(Errc::InvalidShape, "shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw Error(Errc::InvalidShape, "zero dimension in shape " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, Buffer data) : shape_(std::move(shape)), data_(std::move(data)) {}

Tensor Tensor::zeros(Shape shape) { return constant(std::move(shape), 0.0); }

Tensor Tensor::ones(Shape shape) { return constant(std::move(shape), 1.0); }

Tensor Tensor::constant(Shape shape, double value) {
  validate_shape(shape);
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), Buffer(n, value));
}

Tensor Tensor::he_normal(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  validate_shape(shape);
  if (fan_in == 0) throw Error(Errc::InvalidShape, "he_normal fan_in must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Buffer values(shape_size(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  validate_shape(shape);
  if (shape_size(shape) != values.size()) {
    throw Error(Errc::InvalidShape, "shape " + shape_string(shape) + " does not match " +
                                        std::to_string(values.size()) + " values");
  }
  return Tensor(std::move(shape), Buffer(values.begin(), values.end()));
}

std::span<double> Tensor::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const {
  validate_shape(shape);
  if (shape_size(shape) != data_.size()) {
    throw Error(Errc::ShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ stream) ^ index);
}

}  // namespace gmx
