#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace gmx {

inline constexpr std::uint8_t kIgnore = 255;

/// Per-pixel class-index field, row-major [H,W]. kIgnore marks pixels that
/// carry no label.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t& at(std::size_t h, std::size_t w) { return labels[h * width + w]; }
  std::uint8_t at(std::size_t h, std::size_t w) const { return labels[h * width + w]; }
  std::size_t size() const noexcept { return labels.size(); }

  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace gmx
