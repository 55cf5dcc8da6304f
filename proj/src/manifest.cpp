#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gmx/dataio.hpp"

namespace gmx {

const char* to_string(Split split) {
  switch (split) {
    case Split::Labeled: return "labeled";
    case Split::Unlabeled: return "unlabeled";
    case Split::Val: return "val";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "labeled") return Split::Labeled;
  if (s == "unlabeled") return Split::Unlabeled;
  if (s == "val") return Split::Val;
  throw Error(Errc::Format, "unknown split '" + s + "'");
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [split](const ManifestEntry& e) { return e.split == split; }));
}

DatasetManifest split_manifest(const DatasetManifest& manifest, double labeled_fraction, std::size_t val_count,
                               std::uint64_t seed) {
  const std::size_t n = manifest.entries.size();
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw Error(Errc::InvalidConfig, "labeled_fraction must lie in (0,1]");
  }
  if (val_count >= n) {
    throw Error(Errc::InvalidConfig, "val_count " + std::to_string(val_count) + " leaves no training images out of " +
                                         std::to_string(n));
  }
  const std::size_t train = n - val_count;
  const auto labeled = static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(train)));
  if (labeled == 0) throw Error(Errc::InvalidConfig, "labeled split would be empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetManifest out = manifest;
  for (std::size_t rank = 0; rank < n; ++rank) {
    Split split = Split::Unlabeled;
    if (rank < val_count) {
      split = Split::Val;
    } else if (rank < val_count + labeled) {
      split = Split::Labeled;
    }
    out.entries[order[rank]].split = split;
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "#classes: ";
  for (std::size_t i = 0; i < manifest.class_names.size(); ++i) out << (i ? "," : "") << manifest.class_names[i];
  out << "\n";
  for (const auto& e : manifest.entries) out << e.image_file << '\t' << e.mask_file << '\t' << to_string(e.split) << '\n';
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(Errc::Io, "cannot write manifest " + path.string());
  file << out.str();
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(Errc::Io, "cannot open manifest " + path.string());
  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(file, line) || !line.starts_with("#classes: ")) {
    throw FormatError(0, "manifest must start with '#classes: '");
  }
  std::stringstream names(line.substr(10));
  for (std::string name; std::getline(names, name, ',');) manifest.class_names.push_back(name);
  offset += line.size() + 1;

  std::set<std::string> seen;
  while (std::getline(file, line)) {
    if (!line.empty()) {
      std::stringstream fields(line);
      ManifestEntry entry;
      std::string split;
      if (!std::getline(fields, entry.image_file, '\t') || !std::getline(fields, entry.mask_file, '\t') ||
          !std::getline(fields, split, '\t')) {
        throw FormatError(offset, "manifest line needs three tab-separated fields");
      }
      entry.split = parse_split(split);
      if (!seen.insert(entry.image_file).second) throw FormatError(offset, "duplicate entry " + entry.image_file);
      for (const auto* f : {&entry.image_file, &entry.mask_file}) {
        if (!std::filesystem::exists(manifest.root / *f)) {
          throw Error(Errc::Io, "manifest references missing file " + (manifest.root / *f).string());
        }
      }
      manifest.entries.push_back(std::move(entry));
    }
    offset += line.size() + 1;
  }
  return manifest;
}

std::vector<Sample> load_split(const DatasetManifest& manifest, Split split, bool with_masks) {
  std::vector<Sample> out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    Sample s;
    s.image = read_ppm(manifest.root / e.image_file);
    if (split != Split::Unlabeled || with_masks) s.mask = read_pgm(manifest.root / e.mask_file);
    out.push_back(std::move(s));
  }
  return out;
}

Tensor flip_horizontal(const Tensor& chw) {
  if (chw.rank() != 3) throw Error(Errc::InvalidShape, "flip expects [C,H,W]");
  Tensor out = chw;
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = chw.at(ch, y, w - 1 - x);
  return out;
}

Mask flip_horizontal(const Mask& mask) {
  Mask out = mask;
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x) out.at(y, x) = mask.at(y, mask.width - 1 - x);
  return out;
}

Tensor crop(const Tensor& chw, std::size_t top, std::size_t left, std::size_t size) {
  if (chw.rank() != 3 || top + size > chw.dim(1) || left + size > chw.dim(2)) {
    throw Error(Errc::InvalidShape, "crop window outside image");
  }
  Tensor out = Tensor::zeros({chw.dim(0), size, size});
  for (std::size_t c = 0; c < chw.dim(0); ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) out.at(c, y, x) = chw.at(c, top + y, left + x);
  return out;
}

Mask crop(const Mask& mask, std::size_t top, std::size_t left, std::size_t size) {
  if (top + size > mask.height || left + size > mask.width) throw Error(Errc::InvalidShape, "crop window outside mask");
  Mask out(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) out.at(y, x) = mask.at(top + y, left + x);
  return out;
}

}  // namespace gmx
