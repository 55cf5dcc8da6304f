#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gmx/mask.hpp"
#include "gmx/tensor.hpp"

namespace gmx {

// ---------------------------------------------------------------------------
// netpbm IO. Images are [3,H,W] in [0,1] stored as binary P6 with 8 bits per
// channel (v -> floor(v*255 + 0.5)); masks are binary P5 with the raw class
// index as the pixel value.

std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(const std::string& bytes);
std::string encode_pgm(const Mask& mask);
Mask decode_pgm(const std::string& bytes);

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic shapes.

enum class ShapeKind : std::uint8_t { Circle = 1, Square = 2, Triangle = 3 };

inline const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names{"background", "circle", "square", "triangle"};
  return names;
}

/// Geometry in pixel units; a pixel (x,y) is sampled at its centre (x+0.5, y+0.5).
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Circle;
  double cx = 0.0, cy = 0.0;  // circle centre
  double radius = 0.0;
  long x0 = 0, y0 = 0;  // square covers columns [x0, x0+side), rows [y0, y0+side)
  long side = 0;
  double vx[3] = {0, 0, 0}, vy[3] = {0, 0, 0};  // triangle vertices
  double color[3] = {0, 0, 0};
};

bool shape_contains(const ShapeSpec& shape, double px, double py);

/// Paints shapes in order (later shapes occlude earlier ones) over a
/// background colour; returns the clean image and its mask.
void rasterize(const std::vector<ShapeSpec>& shapes, const double background[3], Tensor& image, Mask& mask);

struct ShapesConfig {
  std::size_t n_images = 640;
  std::size_t size = 32;
  std::size_t shapes_min = 1;
  std::size_t shapes_max = 3;
  double min_shape_frac = 0.25;
  double max_shape_frac = 0.6;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Sample {
  Tensor image;
  Mask mask;
};

/// Draws image `index` of the dataset; depends only on (seed, index).
Sample generate_sample(const ShapesConfig& config, std::size_t index);

// ---------------------------------------------------------------------------
// Manifests.

enum class Split { Labeled, Unlabeled, Val };

const char* to_string(Split split);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string image_file;  // relative to root
  std::string mask_file;
  Split split = Split::Labeled;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;

  std::size_t count(Split split) const;
};

/// Writes images/NNNNN.ppm and masks/NNNNN.pgm under `root`. Every entry of
/// the returned manifest is marked Labeled until split_manifest runs.
DatasetManifest generate_shapes(const ShapesConfig& config, const std::filesystem::path& root);

/// Deterministic shuffled partition: the first val_count shuffled entries
/// become val, the next round(labeled_fraction * (n - val_count)) labeled,
/// the rest unlabeled.
DatasetManifest split_manifest(const DatasetManifest& manifest, double labeled_fraction, std::size_t val_count,
                               std::uint64_t seed);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Loads every entry of a split. Masks of unlabeled entries are only read
/// when `with_masks` is set.
std::vector<Sample> load_split(const DatasetManifest& manifest, Split split, bool with_masks);

// ---------------------------------------------------------------------------
// Geometric transforms shared by augmentation and test-time flipping.

Tensor flip_horizontal(const Tensor& chw);
Mask flip_horizontal(const Mask& mask);
Tensor crop(const Tensor& chw, std::size_t top, std::size_t left, std::size_t size);
Mask crop(const Mask& mask, std::size_t top, std::size_t left, std::size_t size);

}  // namespace gmx
