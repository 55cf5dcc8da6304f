#include <cctype>
#include <cmath>

#include "gmx/checkpoint.hpp"
#include "gmx/dataio.hpp"

namespace gmx {

namespace {

struct Header {
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

Header parse_header(const std::string& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) throw FormatError(0, std::string("expected magic ") + magic);
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > 1u << 24) throw FormatError(start, std::string(what) + " too large");
      ++pos;
    }
    if (pos == start) throw FormatError(pos, std::string("expected ") + what);
    return value;
  };
  Header h;
  h.width = number("width");
  h.height = number("height");
  h.maxval = number("maxval");
  if (h.width == 0 || h.height == 0) throw FormatError(pos, "zero image dimension");
  if (h.maxval != 255) throw FormatError(pos, "only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError(pos, "missing whitespace after maxval");
  }
  h.data_offset = pos + 1;
  return h;
}

std::uint8_t quantize(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::DomainError, "image value outside [0,1]: " + std::to_string(v));
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

}  // namespace

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw Error(Errc::InvalidShape, "PPM images must be [3,H,W]");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantize(image.at(c, y, x))));
  return out;
}

Tensor decode_ppm(const std::string& bytes) {
  const Header h = parse_header(bytes, "P6");
  const std::size_t need = 3 * h.width * h.height;
  if (bytes.size() - h.data_offset < need) throw FormatError(bytes.size(), "truncated PPM pixel data");
  Tensor image = Tensor::zeros({3, h.height, h.width});
  std::size_t pos = h.data_offset;
  for (std::size_t y = 0; y < h.height; ++y)
    for (std::size_t x = 0; x < h.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) image.at(c, y, x) = static_cast<unsigned char>(bytes[pos++]) / 255.0;
  return image;
}

std::string encode_pgm(const Mask& mask) {
  if (mask.height == 0 || mask.width == 0) throw Error(Errc::InvalidShape, "empty mask");
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  out.append(mask.labels.begin(), mask.labels.end());
  return out;
}

Mask decode_pgm(const std::string& bytes) {
  const Header h = parse_header(bytes, "P5");
  const std::size_t need = h.width * h.height;
  if (bytes.size() - h.data_offset < need) throw FormatError(bytes.size(), "truncated PGM pixel data");
  Mask mask(h.height, h.width);
  for (std::size_t i = 0; i < need; ++i) mask.labels[i] = static_cast<std::uint8_t>(bytes[h.data_offset + i]);
  return mask;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) { write_file_bytes(path, encode_ppm(image)); }
Tensor read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file_bytes(path)); }
void write_pgm(const std::filesystem::path& path, const Mask& mask) { write_file_bytes(path, encode_pgm(mask)); }
Mask read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file_bytes(path)); }

}  // namespace gmx
