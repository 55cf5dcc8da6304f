#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gmx/tensor.hpp"

namespace gmx::ad {

class Graph;

/// Handle to a node recorded in a Graph. Cheap to copy; valid while the
/// graph that produced it is alive and has not been consumed by backward().
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Called during backward with the node's accumulated output gradient.
/// Implementations push contributions into inputs via Graph::grad_sink.
using BackwardFn = std::function<void(Graph&, std::span<const double> grad_out)>;

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// the tape is topologically sorted by construction and backward is a single
/// reverse sweep.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf bound to an external tensor. If the tensor requires grad,
  /// backward() accumulates into its grad buffer.
  Var leaf(Tensor& tensor);
  /// Leaf holding a private copy; never receives gradient.
  Var constant(Tensor value);

  /// Records an op output. `backward` is kept only when some input requires grad.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of an input node, allocated on first access. Returns an
  /// empty span when the node does not require grad.
  std::span<double> grad_sink(const Var& v);

  /// Reverse sweep from a scalar loss; the graph is cleared afterwards.
  void backward(const Var& loss);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    bool requires_grad = false;
    Tensor* leaf = nullptr;
    Buffer grad;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

void backward(const Var& loss);

/// Copy of the value with no gradient connection.
Var detach(const Var& v);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var relu(const Var& a);
Var exp(const Var& a);
/// Throws DomainError on non-positive input.
Var log(const Var& a);
Var clamp_min(const Var& a, double c);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
/// Concatenates along axis 0.
Var concat(const std::vector<Var>& parts);
Var softmax(const Var& a, std::size_t axis);
Var sum(const Var& a);
Var mean(const Var& a);

}  // namespace gmx::ad
