#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "gmx/autodiff.hpp"
#include "gmx/checkpoint.hpp"
#include "gmx/gradcheck.hpp"
#include "support.hpp"

using namespace gmx;
using ad::Graph;
using ad::Var;

TEST_CASE("tensor factories and shapes") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.size() == 6);
  CHECK(z.rank() == 2);
  CHECK(shape_string(z.shape()) == "[2,3]");
  Tensor c = Tensor::constant({4}, 2.5);
  for (double v : c.data()) CHECK(v == 2.5);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), Error);
  CHECK(Tensor::from({2}, {1, 2}).reshaped({1, 2}).shape() == Shape{1, 2});
  CHECK_THROWS_AS(z.reshaped({4, 2}), Error);
}

TEST_CASE("he_normal has variance 2/fan_in and is seeded") {
  const Tensor a = Tensor::he_normal({200, 100}, 50, 7);
  const Tensor b = Tensor::he_normal({200, 100}, 50, 7);
  CHECK(a.storage() == b.storage());
  double m = 0.0, v = 0.0;
  for (double x : a.data()) m += x;
  m /= static_cast<double>(a.size());
  for (double x : a.data()) v += (x - m) * (x - m);
  v /= static_cast<double>(a.size());
  CHECK(std::abs(m) < 0.01);
  CHECK(v == doctest::Approx(2.0 / 50).epsilon(0.05));
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}

TEST_CASE("matmul matches the triple-loop oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<std::size_t> d(1, 9);
    const std::size_t m = d(rng), k = d(rng), n = d(rng);
    const Tensor a = testing::random_tensor({m, k}, rng), b = testing::random_tensor({k, n}, rng);
    Graph g;
    const Tensor got = ad::matmul(g.constant(a), g.constant(b)).value();
    CHECK(testing::max_abs_diff(got, testing::matmul_oracle(a, b)) < 1e-12);
  }
  Graph g;
  CHECK_THROWS_AS(ad::matmul(g.constant(Tensor::zeros({2, 3})), g.constant(Tensor::zeros({2, 3}))), Error);
}

TEST_CASE("softmax invariants") {
  std::mt19937_64 rng(2);
  const Tensor x = testing::random_tensor({5, 3, 4}, rng, -30, 30);
  Graph g;
  const Tensor y = ad::softmax(g.constant(x), 0).value();
  for (std::size_t p = 0; p < 12; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(y[c * 12 + p] >= 0.0);
      s += y[c * 12 + p];
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  // Shift invariance and stability with huge logits.
  Tensor shifted = x;
  for (auto& v : shifted.data()) v += 1000.0;
  CHECK(testing::max_abs_diff(ad::softmax(g.constant(shifted), 0).value(), y) < 1e-12);
}

TEST_CASE("backward accumulates into leaves and clears the tape") {
  Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  Graph g;
  Var v = g.leaf(w);
  Var loss = ad::sum(ad::mul(v, v));  // d/dw = 2w
  g.backward(loss);
  CHECK(g.node_count() == 0);
  CHECK(w.grad()[0] == 2.0);
  CHECK(w.grad()[1] == -4.0);
  CHECK(w.grad()[2] == 1.0);

  Graph g2;
  g2.backward(ad::sum(g2.leaf(w)));  // accumulates, does not overwrite
  CHECK(w.grad()[0] == 3.0);
}

TEST_CASE("constants and detached values receive no gradient") {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  a.set_requires_grad(true);
  Graph g;
  Var x = g.leaf(a);
  Var y = ad::detach(x);
  CHECK_FALSE(y.requires_grad());
  g.backward(ad::sum(ad::mul(y, y)));
  CHECK(!a.has_grad());
}

TEST_CASE("error contracts") {
  Graph g;
  CHECK_THROWS_AS(g.backward(g.constant(Tensor::zeros({2}))), Error);
  try {
    ad::log(g.constant(Tensor::from({2}, {1.0, 0.0})));
    FAIL("log(0) should throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DomainError);
  }
  try {
    ad::add(g.constant(Tensor::zeros({2})), g.constant(Tensor::zeros({3})));
    FAIL("shape mismatch should throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ShapeMismatch);
  }
  try {
    ad::exp(g.constant(Tensor::from({1}, {1000.0})));
    FAIL("non-finite value should throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DomainError);
  }
}

TEST_CASE("gradient check over 20 seeds for composed elementwise ops") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor a = testing::random_tensor({3, 4}, rng), b = testing::random_tensor({4, 2}, rng, 0.5, 2.0);
    const auto r = grad_check(
        [&](Graph& g) {
          Var x = g.leaf(a), y = g.leaf(b);
          Var h = ad::relu(ad::matmul(x, ad::log(y)));
          return ad::mean(ad::exp(ad::scale(h, 0.5)));
        },
        {&a, &b});
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.coordinates == 20);
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  std::mt19937_64 rng(3);
  std::vector<NamedTensor> tensors{{"enc.0.w", testing::random_tensor({2, 3, 3, 3}, rng)},
                                   {"opt.enc.0.w", testing::random_tensor({2, 3, 3, 3}, rng)},
                                   {"b", Tensor::from({1}, {-0.0})}};
  const std::string bytes = encode_checkpoint(tensors);
  CHECK(bytes.substr(0, 4) == "GMNT");
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].first == tensors[i].first);
    CHECK(back[i].second.shape() == tensors[i].second.shape());
    CHECK(std::memcmp(back[i].second.storage().data(), tensors[i].second.storage().data(),
                      8 * back[i].second.size()) == 0);
  }
  CHECK(encode_checkpoint(back) == bytes);
}

TEST_CASE("malformed checkpoints raise FormatError with an offset") {
  const std::string good = encode_checkpoint({{"w", Tensor::from({2}, {1.0, 2.0})}});
  CHECK_THROWS_AS(decode_checkpoint("XXXX"), FormatError);
  try {
    decode_checkpoint(good.substr(0, good.size() - 3));
    FAIL("truncated checkpoint accepted");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 0);
    CHECK(e.offset() <= good.size());
  }
  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(good + "x"), FormatError);
}
