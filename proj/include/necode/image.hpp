#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "necode/linalg.hpp"
#include "necode/shape.hpp"

namespace necode {

/// Bilinear resampling with half-pixel centres and edge clamping. Each channel
/// is resampled independently.
Vector resize_bilinear(std::span<const double> image, const Shape& in, std::size_t out_height,
                       std::size_t out_width);

/// Window of `height`×`width` starting at (top, left).
Vector crop(std::span<const double> image, const Shape& in, std::size_t top, std::size_t left,
            std::size_t height, std::size_t width);

/// Separable Gaussian blur with a kernel of radius ⌈3σ⌉, renormalised at
/// the borders.
Vector gaussian_blur(std::span<const double> image, const Shape& in, double sigma);

/// Standard luminance quantization table, row-major 8×8.
std::span<const int, 64> luminance_quant_table();

/// Quantization step for each of the 64 DCT coefficients at a quality factor
/// in [1, 100], using the usual quality scaling of the luminance table.
std::array<double, 64> quant_steps(int quality);

/// Blockwise 8×8 orthonormal DCT quantization in the 0..255 pixel domain.
/// Partial edge blocks are padded by edge replication. Returns values on
/// the input scale. Values are neither clamped nor rounded to 8-bit levels.
Vector dct_quantize(std::span<const double> image, const Shape& in, int quality);

/// Mean squared error between two equally sized images.
double mean_squared_error(std::span<const double> a, std::span<const double> b);

}  // namespace necode
