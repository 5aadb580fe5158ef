#pragma once

#include <cstddef>
#include <string>

namespace necode {

/// Native layout of one input sample: channels × height × width, row-major.
/// Flat vectors use {1, 1, n}.
struct Shape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return channels * height * width; }
  std::size_t index(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return (c * height + y) * width + x;
  }
  bool operator==(const Shape&) const = default;

  std::string to_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

}  // namespace necode
