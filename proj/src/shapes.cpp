#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "gmx/dataio.hpp"

namespace gmx {

namespace {

constexpr std::uint64_t kImageStream = 0x5348415045ULL;  // "SHAPE"

double cross(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

void random_color(std::mt19937_64& rng, const double* avoid, double* out) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Keep shapes visibly distinct from the background.
  for (int attempt = 0; attempt < 64; ++attempt) {
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      out[c] = unit(rng);
      d2 += (out[c] - avoid[c]) * (out[c] - avoid[c]);
    }
    if (d2 >= 0.16) return;
  }
  for (int c = 0; c < 3; ++c) out[c] = avoid[c] < 0.5 ? 1.0 : 0.0;
}

}  // namespace

bool shape_contains(const ShapeSpec& s, double px, double py) {
  switch (s.kind) {
    case ShapeKind::Circle:
      return (px - s.cx) * (px - s.cx) + (py - s.cy) * (py - s.cy) <= s.radius * s.radius;
    case ShapeKind::Square:
      return px >= static_cast<double>(s.x0) && px < static_cast<double>(s.x0 + s.side) &&
             py >= static_cast<double>(s.y0) && py < static_cast<double>(s.y0 + s.side);
    case ShapeKind::Triangle: {
      const double d0 = cross(s.vx[0], s.vy[0], s.vx[1], s.vy[1], px, py);
      const double d1 = cross(s.vx[1], s.vy[1], s.vx[2], s.vy[2], px, py);
      const double d2 = cross(s.vx[2], s.vy[2], s.vx[0], s.vy[0], px, py);
      const bool has_neg = d0 < 0 || d1 < 0 || d2 < 0;
      const bool has_pos = d0 > 0 || d1 > 0 || d2 > 0;
      return !(has_neg && has_pos);
    }
  }
  return false;
}

void rasterize(const std::vector<ShapeSpec>& shapes, const double background[3], Tensor& image, Mask& mask) {
  const std::size_t h = mask.height, w = mask.width;
  image = Tensor::zeros({3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) image.at(c, y, x) = background[c];
  std::fill(mask.labels.begin(), mask.labels.end(), 0);
  for (const auto& s : shapes) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (!shape_contains(s, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
        mask.at(y, x) = static_cast<std::uint8_t>(s.kind);
        for (std::size_t c = 0; c < 3; ++c) image.at(c, y, x) = s.color[c];
      }
    }
  }
}

void ShapesConfig::validate() const {
  if (n_images == 0) throw Error(Errc::InvalidConfig, "n_images must be positive");
  if (size < 8 || size % 4 != 0) throw Error(Errc::InvalidConfig, "size must be a multiple of 4 and at least 8");
  if (shapes_min < 1 || shapes_max < shapes_min) throw Error(Errc::InvalidConfig, "need 1 <= shapes_min <= shapes_max");
  if (!(min_shape_frac > 0.0 && min_shape_frac < max_shape_frac && max_shape_frac <= 0.8)) {
    throw Error(Errc::InvalidConfig, "need 0 < min_shape_frac < max_shape_frac <= 0.8");
  }
  if (!(noise_std >= 0.0)) throw Error(Errc::InvalidConfig, "noise_std must be non-negative");
}

Sample generate_sample(const ShapesConfig& config, std::size_t index) {
  config.validate();
  std::mt19937_64 rng(derive_seed(config.seed, kImageStream, index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double n = static_cast<double>(config.size);

  double background[3];
  for (auto& c : background) c = unit(rng);

  std::uniform_int_distribution<std::size_t> count_dist(config.shapes_min, config.shapes_max);
  std::uniform_int_distribution<int> kind_dist(1, 3);
  std::uniform_real_distribution<double> extent_dist(config.min_shape_frac * n, config.max_shape_frac * n);
  const std::size_t count = count_dist(rng);

  std::vector<ShapeSpec> shapes;
  for (std::size_t i = 0; i < count; ++i) {
    ShapeSpec s;
    s.kind = static_cast<ShapeKind>(kind_dist(rng));
    const double extent = extent_dist(rng);
    random_color(rng, background, s.color);
    switch (s.kind) {
      case ShapeKind::Circle: {
        s.radius = extent / 2.0;
        std::uniform_real_distribution<double> centre(s.radius, n - s.radius);
        s.cx = centre(rng);
        s.cy = centre(rng);
        break;
      }
      case ShapeKind::Square: {
        s.side = std::max<long>(2, std::lround(extent));
        std::uniform_int_distribution<long> corner(0, static_cast<long>(config.size) - s.side);
        s.x0 = corner(rng);
        s.y0 = corner(rng);
        break;
      }
      case ShapeKind::Triangle: {
        // Equilateral, randomly rotated, circumradius extent/2.
        const double radius = extent / 2.0;
        std::uniform_real_distribution<double> centre(radius, n - radius);
        const double cx = centre(rng), cy = centre(rng);
        const double phase = unit(rng) * 2.0 * std::numbers::pi;
        for (int v = 0; v < 3; ++v) {
          const double a = phase + v * 2.0 * std::numbers::pi / 3.0;
          s.vx[v] = cx + radius * std::cos(a);
          s.vy[v] = cy + radius * std::sin(a);
        }
        break;
      }
    }
    shapes.push_back(s);
  }

  Sample sample;
  sample.mask = Mask(config.size, config.size);
  rasterize(shapes, background, sample.image, sample.mask);
  if (config.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, config.noise_std);
    for (auto& v : sample.image.data()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  }
  return sample;
}

DatasetManifest generate_shapes(const ShapesConfig& config, const std::filesystem::path& root) {
  config.validate();
  DatasetManifest manifest;
  manifest.root = root;
  manifest.class_names = class_names();
  for (std::size_t i = 0; i < config.n_images; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05zu", i);
    ManifestEntry entry{std::string("images/") + stem + ".ppm", std::string("masks/") + stem + ".pgm", Split::Labeled};
    const Sample sample = generate_sample(config, i);
    write_ppm(root / entry.image_file, sample.image);
    write_pgm(root / entry.mask_file, sample.mask);
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

}  // namespace gmx
