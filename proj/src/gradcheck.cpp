#include "gmx/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace gmx {

namespace {

double evaluate(const ScalarFn& f) {
  ad::Graph graph;
  ad::Var out = f(graph);
  if (out.size() != 1) throw Error(Errc::NotScalar, "grad_check function must return a scalar");
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor*>& inputs, const GradCheckOptions& options) {
  std::vector<bool> previous;
  for (Tensor* t : inputs) {
    previous.push_back(t->requires_grad());
    t->set_requires_grad(true);
    t->zero_grad();
  }
  {
    ad::Graph graph;
    ad::Var out = f(graph);
    graph.backward(out);
  }

  struct Coord {
    std::size_t tensor;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t]->size(); ++i) coords.push_back({t, i});
  }
  if (options.sample && *options.sample < coords.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(*options.sample);
  }

  GradCheckResult result;
  for (const auto& c : coords) {
    Tensor& t = *inputs[c.tensor];
    const double analytic = t.grad()[c.index];
    const double original = t[c.index];
    t[c.index] = original + options.eps;
    const double plus = evaluate(f);
    t[c.index] = original - options.eps;
    const double minus = evaluate(f);
    t[c.index] = original;
    const double numeric = (plus - minus) / (2.0 * options.eps);
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
    result.max_relative_error = std::max(result.max_relative_error, abs_err / denom);
    ++result.coordinates;
  }

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    inputs[t]->clear_grad();
    inputs[t]->set_requires_grad(previous[t]);
  }
  return result;
}

}  // namespace gmx
