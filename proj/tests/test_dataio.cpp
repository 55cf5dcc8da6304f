#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "gmx/checkpoint.hpp"
#include "gmx/dataio.hpp"
#include "support.hpp"

using namespace gmx;

TEST_CASE("netpbm round trips") {
  std::mt19937_64 rng(1);
  const Mask m = testing::random_mask(5, 7, 4, rng);
  CHECK(decode_pgm(encode_pgm(m)) == m);

  Tensor img = Tensor::zeros({3, 1, 2});
  img[1] = 1.0;
  const std::string bytes = encode_ppm(img);
  CHECK(static_cast<unsigned char>(bytes[bytes.size() - 6]) == 0);
  CHECK(static_cast<unsigned char>(bytes[bytes.size() - 3]) == 255);

  const Tensor noisy = testing::random_tensor({3, 4, 4}, rng, 0, 1);
  const std::string once = encode_ppm(noisy);
  CHECK(encode_ppm(decode_ppm(once)) == once);

  testing::TempDir dir("netpbm");
  write_pgm(dir.path() / "m.pgm", m);
  CHECK(read_pgm(dir.path() / "m.pgm") == m);
}

TEST_CASE("malformed netpbm raises FormatError") {
  CHECK_THROWS_AS(decode_ppm("P5\n2 2\n255\nabcd"), FormatError);
  CHECK_THROWS_AS(decode_ppm("P6\n2 2\n255\nabc"), FormatError);
  CHECK_THROWS_AS(decode_pgm("P5\n2 x\n255\nabcd"), FormatError);
  CHECK_THROWS_AS(decode_pgm(""), FormatError);
  testing::TempDir dir("netpbm_missing");
  try {
    read_ppm(dir.path() / "nope.ppm");
    FAIL("missing file accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::Io);
  }
}

TEST_CASE("rasterized square covers its analytic area") {
  for (long side : {1L, 5L, 12L, 32L}) {
    ShapeSpec sq;
    sq.kind = ShapeKind::Square;
    sq.x0 = 32 - side;
    sq.y0 = 0;
    sq.side = side;
    const double bg[3] = {0, 0, 0};
    Tensor image = Tensor::zeros({3, 32, 32});
    Mask mask(32, 32);
    rasterize({sq}, bg, image, mask);
    CHECK(std::count(mask.labels.begin(), mask.labels.end(), 2) == side * side);
  }
}

TEST_CASE("shape generator") {
  ShapesConfig cfg;
  cfg.seed = 4;
  const Sample a = generate_sample(cfg, 17), b = generate_sample(cfg, 17);
  CHECK(a.image.storage() == b.image.storage());
  CHECK(a.mask == b.mask);
  CHECK(a.image.shape() == Shape{3, 32, 32});

  std::size_t present[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < 500; ++i) {
    const Sample s = generate_sample(cfg, i);
    std::set<std::uint8_t> classes(s.mask.labels.begin(), s.mask.labels.end());
    for (auto c : classes) {
      REQUIRE(c < 4);
      ++present[c];
    }
    for (double v : s.image.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  for (int c = 1; c < 4; ++c) CHECK(present[c] >= 100);

  ShapesConfig bad;
  bad.shapes_min = 4;
  bad.shapes_max = 2;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("split_manifest") {
  DatasetManifest m;
  for (int i = 0; i < 100; ++i) m.entries.push_back({"i" + std::to_string(i), "m" + std::to_string(i), Split::Labeled});
  const auto s = split_manifest(m, 0.1, 20, 3);
  CHECK(s.count(Split::Labeled) == 8);
  CHECK(s.count(Split::Unlabeled) == 72);
  CHECK(s.count(Split::Val) == 20);
  CHECK(split_manifest(m, 1.0, 20, 3).count(Split::Unlabeled) == 0);
  CHECK_THROWS_AS(split_manifest(m, 0.0, 20, 3), Error);
  CHECK_THROWS_AS(split_manifest(m, 0.5, 100, 3), Error);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> n_dist(2, 60);
    DatasetManifest base;
    const int n = n_dist(rng);
    for (int i = 0; i < n; ++i) base.entries.push_back({std::to_string(i), std::to_string(i), Split::Labeled});
    const std::size_t val = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const double frac = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    const auto labeled = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n - val)));
    if (labeled == 0) {
      CHECK_THROWS_AS(split_manifest(base, frac, val, rng()), Error);
      continue;
    }
    const auto out = split_manifest(base, frac, val, rng());
    CHECK(out.count(Split::Labeled) == labeled);
    std::set<std::string> names;
    for (const auto& e : out.entries) names.insert(e.image_file);
    CHECK(names.size() == static_cast<std::size_t>(n));
    CHECK(out.count(Split::Val) == val);
    CHECK(out.count(Split::Labeled) + out.count(Split::Unlabeled) + out.count(Split::Val) == static_cast<std::size_t>(n));
  }
}

TEST_CASE("generated datasets are byte-identical and round trip through the manifest") {
  testing::TempDir a("gen_a"), b("gen_b");
  ShapesConfig cfg;
  cfg.n_images = 12;
  cfg.seed = 2;
  const auto ma = split_manifest(generate_shapes(cfg, a.path()), 0.5, 4, 2);
  const auto mb = split_manifest(generate_shapes(cfg, b.path()), 0.5, 4, 2);
  write_manifest(a.path() / "manifest.tsv", ma);
  write_manifest(b.path() / "manifest.tsv", mb);
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    CHECK(read_file_bytes(entry.path()) == read_file_bytes(b.path() / rel));
  }

  const auto back = read_manifest(a.path() / "manifest.tsv");
  CHECK(back.entries.size() == 12);
  CHECK(back.count(Split::Val) == 4);
  const auto unl = load_split(back, Split::Unlabeled, false);
  REQUIRE(!unl.empty());
  CHECK(unl[0].mask.size() == 0);
  CHECK(load_split(back, Split::Unlabeled, true)[0].mask.size() == 32 * 32);
}

TEST_CASE("flip and crop") {
  std::mt19937_64 rng(6);
  const Tensor img = testing::random_tensor({3, 5, 6}, rng);
  CHECK(flip_horizontal(flip_horizontal(img)).storage() == img.storage());
  const Tensor f = flip_horizontal(img);
  CHECK(f.at(1, 2, 0) == img.at(1, 2, 5));
  const Tensor c = crop(img, 1, 2, 3);
  CHECK(c.shape() == Shape{3, 3, 3});
  CHECK(c.at(2, 0, 0) == img.at(2, 1, 2));
  CHECK_THROWS_AS(crop(img, 3, 0, 3), Error);
}
