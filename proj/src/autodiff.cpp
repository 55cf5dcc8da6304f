#include "gmx/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace gmx::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (&a.graph() != &b.graph()) throw Error(Errc::ShapeMismatch, std::string(op) + ": operands from different graphs");
  if (a.shape() != b.shape()) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <typename F>
Var unary(const char* op, const Var& a, F forward, std::function<double(double x, double y)> derivative) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = forward(v);
  Tensor saved_out = out;
  return a.graph().record(op, std::move(out), {a},
                          [a, derivative, saved_out](Graph& g, std::span<const double> go) {
                            auto ga = g.grad_sink(a);
                            const auto x = a.value().data();
                            const auto y = saved_out.data();
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * derivative(x[i], y[i]);
                          });
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }

bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::leaf(Tensor& tensor) {
  Node node;
  node.op = "leaf";
  node.value = tensor;
  node.value.set_requires_grad(false);
  node.value.clear_grad();
  node.requires_grad = tensor.requires_grad();
  node.leaf = node.requires_grad ? &tensor : nullptr;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node node;
  node.op = "constant";
  value.set_requires_grad(false);
  value.clear_grad();
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw Error(Errc::DomainError, std::string(op) + " produced a non-finite value");
  Node node;
  node.op = op;
  node.value = std::move(value);
  for (const auto& in : inputs) {
    if (in.graph_ != this) throw Error(Errc::ShapeMismatch, std::string(op) + ": input from a different graph");
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Graph::grad_sink(const Var& v) {
  Node& node = nodes_.at(v.id_);
  if (!node.requires_grad) return {};
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Graph::backward(const Var& loss) {
  if (loss.graph_ != this) throw Error(Errc::NotScalar, "loss belongs to a different graph");
  if (loss.size() != 1) throw Error(Errc::NotScalar, "loss has shape " + shape_string(loss.shape()));
  if (nodes_[loss.id_].requires_grad) {
    nodes_[loss.id_].grad.assign(1, 1.0);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.empty()) continue;
      if (node.leaf != nullptr) {
        auto dst = node.leaf->grad();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
      } else if (node.backward) {
        // The closure may touch other nodes' grads; keep our buffer alive.
        Buffer go = std::move(node.grad);
        node.backward(*this, go);
      }
      node.grad.clear();
      node.grad.shrink_to_fit();
    }
  }
  nodes_.clear();
}

void backward(const Var& loss) { loss.graph().backward(loss); }

Var detach(const Var& v) { return v.graph().constant(v.value()); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.graph().record("add", std::move(out), {a, b}, [a, b](Graph& g, std::span<const double> go) {
    for (const Var& in : {a, b}) {
      auto gi = g.grad_sink(in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.graph().record("sub", std::move(out), {a, b}, [a, b](Graph& g, std::span<const double> go) {
    auto ga = g.grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    auto gb = g.grad_sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.graph().record("mul", std::move(out), {a, b}, [a, b](Graph& g, std::span<const double> go) {
    auto ga = g.grad_sink(a);
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    auto gb = g.grad_sink(b);
    const auto av = a.value().data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  return a.graph().record("scale", std::move(out), {a}, [a, c](Graph& g, std::span<const double> go) {
    auto ga = g.grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * go[i];
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += c;
  return a.graph().record("add_scalar", std::move(out), {a}, [a](Graph& g, std::span<const double> go) {
    auto ga = g.grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
  });
}

Var relu(const Var& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw Error(Errc::DomainError, "log of non-positive value " + std::to_string(v));
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var clamp_min(const Var& a, double c) {
  return unary(
      "clamp_min", a, [c](double x) { return x < c ? c : x; },
      [c](double x, double) { return x < c ? 0.0 : 1.0; });
}

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) {
    throw Error(Errc::ShapeMismatch, "matmul expects rank-2 operands");
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw Error(Errc::ShapeMismatch, "matmul inner dims " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  MapMat(out.data().data(), m, n).noalias() =
      ConstMapMat(a.value().data().data(), m, k) * ConstMapMat(b.value().data().data(), k, n);
  return a.graph().record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Graph& g, std::span<const double> go) {
    ConstMapMat dy(go.data(), m, n);
    if (auto ga = g.grad_sink(a); !ga.empty()) {
      MapMat(ga.data(), m, k).noalias() += dy * ConstMapMat(b.value().data().data(), k, n).transpose();
    }
    if (auto gb = g.grad_sink(b); !gb.empty()) {
      MapMat(gb.data(), k, n).noalias() += ConstMapMat(a.value().data().data(), m, k).transpose() * dy;
    }
  });
}

Var transpose(const Var& a) {
  if (a.value().rank() != 2) throw Error(Errc::ShapeMismatch, "transpose expects rank 2");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out = Tensor::zeros({c, r});
  const auto av = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[j * r + i] = av[i * c + j];
  return a.graph().record("transpose", std::move(out), {a}, [a, r, c](Graph& g, std::span<const double> go) {
    auto ga = g.grad_sink(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += go[j * r + i];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph().record("reshape", std::move(out), {a}, [a](Graph& g, std::span<const double> go) {
    auto ga = g.grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(Errc::InvalidShape, "concat of zero tensors");
  Shape shape = parts.front().shape();
  std::size_t lead = 0;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    Shape head_tail(shape.begin() + 1, shape.end());
    if (p.value().rank() != shape.size() || tail != head_tail) {
      throw Error(Errc::ShapeMismatch, "concat: " + shape_string(p.shape()) + " vs " + shape_string(shape));
    }
    lead += p.shape()[0];
  }
  shape[0] = lead;
  std::vector<double> values;
  values.reserve(shape_size(shape));
  for (const auto& p : parts) {
    const auto v = p.value().data();
    values.insert(values.end(), v.begin(), v.end());
  }
  return parts.front().graph().record("concat", Tensor::from(shape, std::move(values)), parts,
                                      [parts](Graph& g, std::span<const double> go) {
                                        std::size_t offset = 0;
                                        for (const auto& p : parts) {
                                          auto gp = g.grad_sink(p);
                                          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[offset + i];
                                          offset += p.size();
                                        }
                                      });
}

Var softmax(const Var& a, std::size_t axis) {
  const Shape& shape = a.shape();
  if (axis >= shape.size()) throw Error(Errc::InvalidShape, "softmax axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  Tensor out = a.value();
  auto y = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = y[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, y[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        double& v = y[base + k * inner];
        v = std::exp(v - mx);
        total += v;
      }
      for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= total;
    }
  }
  Tensor saved = out;
  return a.graph().record("softmax", std::move(out), {a},
                          [a, saved, outer, inner, len](Graph& g, std::span<const double> go) {
                            auto ga = g.grad_sink(a);
                            const auto y = saved.data();
                            for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t in = 0; in < inner; ++in) {
                                const std::size_t base = o * len * inner + in;
                                double dot = 0.0;
                                for (std::size_t k = 0; k < len; ++k) dot += go[base + k * inner] * y[base + k * inner];
                                for (std::size_t k = 0; k < len; ++k) {
                                  const std::size_t idx = base + k * inner;
                                  ga[idx] += y[idx] * (go[idx] - dot);
                                }
                              }
                            }
                          });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.graph().record("sum", Tensor::constant({1}, total), {a}, [a](Graph& g, std::span<const double> go) {
    auto ga = g.grad_sink(a);
    for (auto& v : ga) v += go[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

}  // namespace gmx::ad
