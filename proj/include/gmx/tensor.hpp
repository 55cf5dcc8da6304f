#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmx {

enum class Errc {
  InvalidShape,
  ShapeMismatch,
  DomainError,
  NotScalar,
  EmptyBatch,
  InvalidConfig,
  InvalidDistribution,
  InvalidIteration,
  StateMismatch,
  Diverged,
  Io,
  Format,
  InvalidClass,
  EmptyEvaluation,
  CheckpointMismatch,
};

const char* to_string(Errc code);

/// Base of every error raised by the library. `code()` identifies the
/// failure class; the message carries the details.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

class DivergedError : public Error {
 public:
  DivergedError(long iteration, const std::string& detail);
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

class FormatError : public Error {
 public:
  FormatError(std::size_t offset, const std::string& detail);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// 64-byte aligned storage. Vectorized reductions peel according to the
/// pointer's alignment, so a fixed alignment keeps every result a function of
/// the shapes alone and runs bit-reproducible within and across processes.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor constant(Shape shape, double value);
  /// Draws from N(0, 2 / fan_in).
  static Tensor he_normal(Shape shape, std::size_t fan_in, std::uint64_t seed);
  static Tensor from(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  Buffer& storage() noexcept { return data_; }
  const Buffer& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // [C,H,W] accessors.
  double& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<double> grad();  // allocates zeros on first use
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

 private:
  Tensor(Shape shape, Buffer data);

  Shape shape_;
  Buffer data_;
  bool requires_grad_ = false;
  Buffer grad_;
};

/// Derives an independent 64-bit seed for stream `stream`, item `index`
/// from a master seed (splitmix64 finalizer chain).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace gmx
