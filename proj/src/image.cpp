#include "necode/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "necode/error.hpp"

namespace necode {

namespace {

void check_layout(std::span<const double> image, const Shape& in, const char* op) {
  if (image.size() != in.size()) {
    throw InvalidArgument(std::string(op) + ": image has " + std::to_string(image.size()) +
                          " values, layout " + in.to_string() + " expects " +
                          std::to_string(in.size()));
  }
}

}  // namespace

Vector resize_bilinear(std::span<const double> image, const Shape& in, std::size_t out_height,
                       std::size_t out_width) {
  check_layout(image, in, "resize");
  if (out_height == 0 || out_width == 0) throw InvalidArgument("resize: empty target size");
  if (out_height == in.height && out_width == in.width) return {image.begin(), image.end()};

  const Shape out{in.channels, out_height, out_width};
  Vector result(out.size());
  const double sy = static_cast<double>(in.height) / static_cast<double>(out_height);
  const double sx = static_cast<double>(in.width) / static_cast<double>(out_width);
  for (std::size_t y = 0; y < out_height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(in.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(in.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < in.channels; ++c) {
        const double top = (1.0 - wx) * image[in.index(c, y0, x0)] + wx * image[in.index(c, y0, x1)];
        const double bottom = (1.0 - wx) * image[in.index(c, y1, x0)] + wx * image[in.index(c, y1, x1)];
        result[out.index(c, y, x)] = (1.0 - wy) * top + wy * bottom;
      }
    }
  }
  return result;
}

Vector crop(std::span<const double> image, const Shape& in, std::size_t top, std::size_t left,
            std::size_t height, std::size_t width) {
  check_layout(image, in, "crop");
  if (height == 0 || width == 0 || top + height > in.height || left + width > in.width) {
    throw InvalidArgument("crop: window " + std::to_string(height) + "x" + std::to_string(width) +
                          " at (" + std::to_string(top) + ", " + std::to_string(left) +
                          ") does not fit " + in.to_string());
  }
  const Shape out{in.channels, height, width};
  Vector result(out.size());
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        result[out.index(c, y, x)] = image[in.index(c, top + y, left + x)];
  return result;
}

Vector gaussian_blur(std::span<const double> image, const Shape& in, double sigma) {
  check_layout(image, in, "blur");
  if (!(sigma > 0.0)) throw InvalidArgument("blur: sigma must be positive");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t k = -radius; k <= radius; ++k)
    taps[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));

  // One 1-D pass along an axis; weights falling outside the image are dropped
  // and the rest renormalised.
  auto pass = [&](std::span<const double> src, bool horizontal) {
    Vector dst(src.size());
    const auto h = static_cast<std::ptrdiff_t>(in.height);
    const auto w = static_cast<std::ptrdiff_t>(in.width);
    for (std::size_t c = 0; c < in.channels; ++c) {
      for (std::ptrdiff_t y = 0; y < h; ++y) {
        for (std::ptrdiff_t x = 0; x < w; ++x) {
          double acc = 0.0;
          double wsum = 0.0;
          for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
            const std::ptrdiff_t yy = horizontal ? y : y + k;
            const std::ptrdiff_t xx = horizontal ? x + k : x;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const double t = taps[static_cast<std::size_t>(k + radius)];
            acc += t * src[in.index(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx))];
            wsum += t;
          }
          dst[in.index(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x))] = acc / wsum;
        }
      }
    }
    return dst;
  };
  const Vector horizontal = pass(image, true);
  return pass(horizontal, false);
}

std::span<const int, 64> luminance_quant_table() {
  static constexpr std::array<int, 64> kTable = {
      16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
      14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
      18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
      49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  return kTable;
}

std::array<double, 64> quant_steps(int quality) {
  if (quality < 1 || quality > 100) throw InvalidArgument("quantize: quality must lie in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<double, 64> steps{};
  const auto table = luminance_quant_table();
  for (std::size_t i = 0; i < 64; ++i) {
    const int step = std::clamp((table[i] * scale + 50) / 100, 1, 255);
    steps[i] = static_cast<double>(step);
  }
  return steps;
}

Vector dct_quantize(std::span<const double> image, const Shape& in, int quality) {
  check_layout(image, in, "quantize");
  const auto steps = quant_steps(quality);

  // Orthonormal 8-point DCT-II basis: basis[u][x].
  std::array<std::array<double, 8>, 8> basis{};
  for (std::size_t u = 0; u < 8; ++u) {
    const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (std::size_t x = 0; x < 8; ++x)
      basis[u][x] = a * std::cos((2.0 * static_cast<double>(x) + 1.0) * static_cast<double>(u) *
                                 std::numbers::pi / 16.0);
  }

  Vector out(image.size());
  std::array<double, 64> block{};
  std::array<double, 64> tmp{};
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t by = 0; by < in.height; by += 8) {
      for (std::size_t bx = 0; bx < in.width; bx += 8) {
        for (std::size_t y = 0; y < 8; ++y) {
          const std::size_t sy = std::min(by + y, in.height - 1);
          for (std::size_t x = 0; x < 8; ++x) {
            const std::size_t sx = std::min(bx + x, in.width - 1);
            block[y * 8 + x] = image[in.index(c, sy, sx)] * 255.0 - 128.0;
          }
        }
        // Rows, then columns.
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t u = 0; u < 8; ++u) {
            double s = 0.0;
            for (std::size_t x = 0; x < 8; ++x) s += basis[u][x] * block[y * 8 + x];
            tmp[y * 8 + u] = s;
          }
        for (std::size_t v = 0; v < 8; ++v)
          for (std::size_t u = 0; u < 8; ++u) {
            double s = 0.0;
            for (std::size_t y = 0; y < 8; ++y) s += basis[v][y] * tmp[y * 8 + u];
            block[v * 8 + u] = std::round(s / steps[v * 8 + u]) * steps[v * 8 + u];
          }
        for (std::size_t v = 0; v < 8; ++v)
          for (std::size_t x = 0; x < 8; ++x) {
            double s = 0.0;
            for (std::size_t u = 0; u < 8; ++u) s += basis[u][x] * block[v * 8 + u];
            tmp[v * 8 + x] = s;
          }
        for (std::size_t y = 0; y < 8 && by + y < in.height; ++y)
          for (std::size_t x = 0; x < 8 && bx + x < in.width; ++x) {
            double s = 0.0;
            for (std::size_t v = 0; v < 8; ++v) s += basis[v][y] * tmp[v * 8 + x];
            out[in.index(c, by + y, bx + x)] = (s + 128.0) / 255.0;
          }
      }
    }
  }
  return out;
}

double mean_squared_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("mse: size mismatch or empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace necode
