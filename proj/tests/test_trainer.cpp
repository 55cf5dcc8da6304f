#include <cmath>
#include <random>

#include "doctest.h"
#include "gmx/checkpoint.hpp"
#include "gmx/trainer.hpp"
#include "support.hpp"

using namespace gmx;

namespace {

TrainData tiny_data(std::size_t labeled, std::size_t unlabeled, std::size_t val) {
  ShapesConfig shapes;
  shapes.seed = 9;
  TrainData d;
  std::size_t i = 0;
  for (; i < labeled; ++i) d.labeled.push_back(generate_sample(shapes, i));
  for (; i < labeled + unlabeled; ++i) d.unlabeled.push_back(generate_sample(shapes, i).image);
  for (; i < labeled + unlabeled + val; ++i) d.val.push_back(generate_sample(shapes, i));
  return d;
}

TrainConfig short_config(std::size_t iters) {
  TrainConfig c;
  c.max_iter = iters;
  c.eval_every = iters;
  c.batch_labeled = 2;
  c.batch_unlabeled = 2;
  c.base_lr = 0.05;
  return c;
}

}  // namespace

TEST_CASE("poly_lr") {
  CHECK(poly_lr(1e-3, 0, 40000, 0.9) == 1e-3);
  CHECK(poly_lr(1e-3, 40000, 40000, 0.9) == 0.0);
  CHECK(std::abs(poly_lr(1e-3, 20000, 40000, 0.9) - 5.3589e-4) < 1e-8);
  CHECK(std::abs(poly_lr(1e-3, 20000, 40000, 0.9) - 1e-3 * std::pow(0.5, 0.9)) < 1e-12);
  double prev = poly_lr(1e-3, 0, 100, 0.9);
  for (std::size_t i = 1; i <= 100; ++i) {
    const double lr = poly_lr(1e-3, i, 100, 0.9);
    CHECK(lr < prev);
    prev = lr;
  }
  CHECK_THROWS_AS(poly_lr(1e-3, 101, 100, 0.9), Error);
}

TEST_CASE("ramp_weight") {
  CHECK(ramp_weight(10, 10, 0.7) == 0.7);
  CHECK(ramp_weight(50, 10, 0.7) == 0.7);
  CHECK(std::abs(ramp_weight(0, 10, 1.0) - 6.7379e-3) < 1e-7);
  double prev = 0.0;
  for (std::size_t i = 0; i <= 20; ++i) {
    CHECK(ramp_weight(i, 20, 1.0) >= prev);
    prev = ramp_weight(i, 20, 1.0);
  }
}

TEST_CASE("sgd_step") {
  ParamMap params;
  params["w"] = Tensor::from({1}, {0.0});
  OptimizerState state = OptimizerState::zeros_like(params);

  params["w"].grad()[0] = 1.0;
  sgd_step(params, state, 0.1, 0.9, 0.0);
  CHECK(std::abs(params["w"][0] - -0.1) < 1e-15);
  params["w"].grad()[0] = 1.0;
  sgd_step(params, state, 0.1, 0.9, 0.0);
  CHECK(std::abs(params["w"][0] - (-0.1 - 0.19)) < 1e-15);

  ParamMap plain;
  plain["w"] = Tensor::from({2}, {1.0, 2.0});
  OptimizerState s2 = OptimizerState::zeros_like(plain);
  plain["w"].grad()[0] = 0.5;
  plain["w"].grad()[1] = -2.0;
  sgd_step(plain, s2, 0.1, 0.0, 0.0);
  CHECK(std::abs(plain["w"][0] - 0.95) < 1e-15);
  CHECK(std::abs(plain["w"][1] - 2.2) < 1e-15);

  ParamMap still;
  still["w"] = Tensor::from({1}, {3.0});
  OptimizerState s3 = OptimizerState::zeros_like(still);
  still["w"].zero_grad();
  sgd_step(still, s3, 0.1, 0.9, 0.0);
  CHECK(still["w"][0] == 3.0);
}

TEST_CASE("augment") {
  std::mt19937_64 rng(1);
  const Tensor image = testing::random_tensor({3, 8, 8}, rng, 0, 1);
  const Mask mask = testing::random_mask(8, 8, 4, rng);
  TrainConfig always;
  always.flip_prob = 1.0;
  const auto once = augment(image, mask, rng, always);
  const auto twice = augment(once.image, once.mask, rng, always);
  CHECK(twice.image.storage() == image.storage());
  CHECK(twice.mask == mask);
  std::uniform_int_distribution<std::size_t> d(0, 7);
  for (int i = 0; i < 100; ++i) {
    const std::size_t h = d(rng), w = d(rng);
    CHECK(once.mask.at(h, w) == mask.at(h, 7 - w));
  }

  TrainConfig full_crop;
  full_crop.crop = 8;
  full_crop.flip_prob = 0.0;
  const auto same = augment(image, mask, rng, full_crop);
  CHECK(same.image.storage() == image.storage());
  CHECK(same.mask == mask);

  TrainConfig cropped;
  cropped.crop = 4;
  const auto small = augment(image, mask, rng, cropped);
  CHECK(small.image.shape() == Shape{3, 4, 4});
  CHECK(small.mask.size() == 16);
}

TEST_CASE("train_step is deterministic") {
  const TrainData data = tiny_data(2, 2, 0);
  TrainConfig cfg = short_config(10);
  cfg.ramp_len = 1;
  auto step = [&] {
    SegModel model = initial_model(ModelConfig{}, cfg);
    OptimizerState state = OptimizerState::zeros_like(model.params());
    const auto m = train_step(model, data.labeled, data.unlabeled, 3, cfg, state);
    return std::make_pair(m, encode_checkpoint(checkpoint_tensors(model, state)));
  };
  const auto a = step(), b = step();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first.loss_unsup > 0.0);
}

TEST_CASE("zero unsupervised weight reproduces supervised-only training bit for bit") {
  TrainConfig cfg = short_config(6);
  cfg.unsup_weight_max = 0.0;
  const TrainData with_unlabeled = tiny_data(4, 4, 2);
  TrainData supervised = with_unlabeled;
  supervised.unlabeled.clear();
  const auto a = run_training(ModelConfig{}, cfg, with_unlabeled);
  const auto b = run_training(ModelConfig{}, cfg, supervised);
  CHECK(encode_checkpoint(checkpoint_tensors(a.model, a.state)) ==
        encode_checkpoint(checkpoint_tensors(b.model, b.state)));
  CHECK(format_metrics_csv(a.log) == format_metrics_csv(b.log));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  SegModel model = initial_model(ModelConfig{}, TrainConfig{});
  const SegModel before = model;
  OptimizerState state = OptimizerState::zeros_like(model.params());
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (auto& [name, t] : model.params())
    for (double& g : t.grad()) g = n(rng);
  sgd_step(model.params(), state, 0.0, 0.9, 1e-4);
  for (const auto& [name, t] : before.params()) CHECK(model.params().at(name).storage() == t.storage());
}

TEST_CASE("run_training outputs and determinism") {
  testing::TempDir dir("trainer");
  TrainConfig cfg = short_config(1);
  RunOutputs out;
  out.checkpoint = dir.path() / "a.ckpt";
  out.metrics_csv = dir.path() / "a.csv";
  const auto r = run_training(ModelConfig{}, cfg, tiny_data(2, 2, 2), out);
  CHECK(r.log.size() == 1);
  const std::string csv = read_file_bytes(*out.metrics_csv);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);

  // The checkpoint carries the model and the optimizer velocity.
  const auto tensors = load_checkpoint(*out.checkpoint);
  SegModel back(ModelConfig{}, 77);
  back.load_tensors(tensors);
  for (const auto& [name, t] : r.model.params()) CHECK(back.params().at(name).storage() == t.storage());
  OptimizerState state = OptimizerState::zeros_like(back.params());
  state.load(tensors);
  for (const auto& [name, v] : r.state.velocity) CHECK(state.velocity.at(name).storage() == v.storage());

  RunOutputs out2;
  out2.checkpoint = dir.path() / "b.ckpt";
  run_training(ModelConfig{}, cfg, tiny_data(2, 2, 2), out2);
  CHECK(read_file_bytes(*out.checkpoint) == read_file_bytes(*out2.checkpoint));
}

TEST_CASE("supervised loss decreases over 500 steps on 32 labeled images") {
  TrainConfig cfg = short_config(500);
  cfg.unsup_weight_max = 0.0;
  cfg.batch_labeled = 4;
  const auto r = run_training(ModelConfig{}, cfg, tiny_data(32, 0, 0));
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += r.log[i].loss_sup;
    last += r.log[r.log.size() - 1 - i].loss_sup;
  }
  CHECK(r.log.front().loss_sup > r.log.back().loss_sup);
  CHECK(last < 0.8 * first);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.max_iter = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.unsup_weight_max = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(TrainConfig{}.effective_ramp_len() == 400);
}
