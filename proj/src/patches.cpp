#include "necode/patches.hpp"

#include <string>

#include "necode/error.hpp"

namespace necode {

std::size_t PatchGeometry::out_height(const Shape& in) const {
  validate(in);
  return (in.height + 2 * padding - kernel) / stride + 1;
}

std::size_t PatchGeometry::out_width(const Shape& in) const {
  validate(in);
  return (in.width + 2 * padding - kernel) / stride + 1;
}

void PatchGeometry::validate(const Shape& in) const {
  if (kernel == 0 || stride == 0) throw InvalidArgument("patch geometry: kernel and stride must be positive");
  if (in.size() == 0) throw InvalidArgument("patch geometry: empty input layout");
  if (kernel > in.height + 2 * padding || kernel > in.width + 2 * padding) {
    throw InvalidArgument("patch geometry: kernel " + std::to_string(kernel) +
                          " larger than padded input " + in.to_string());
  }
}

namespace {

// Calls fn(row, col, pixel) for every in-bounds patch entry; pixel is the flat
// native index.
template <typename Fn>
void for_each_tap(const Shape& in, const PatchGeometry& g, Fn&& fn) {
  const std::size_t oh = g.out_height(in);
  const std::size_t ow = g.out_width(in);
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::size_t col = oy * ow + ox;
      for (std::size_t c = 0; c < in.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(in.height)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(in.width)) continue;
            const std::size_t row = (c * g.kernel + ky) * g.kernel + kx;
            fn(row, col, in.index(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)));
          }
        }
      }
    }
  }
}

}  // namespace

DenseMatrix unfold(std::span<const double> x, const Shape& in, const PatchGeometry& g) {
  if (x.size() != in.size()) {
    throw InvalidArgument("unfold: input has " + std::to_string(x.size()) +
                          " values, layout " + in.to_string() + " expects " +
                          std::to_string(in.size()));
  }
  DenseMatrix cols(g.patch_size(in), g.positions(in));
  for_each_tap(in, g, [&](std::size_t r, std::size_t c, std::size_t p) { cols(r, c) = x[p]; });
  return cols;
}

Vector unfold_adjoint(const DenseMatrix& cols, const Shape& in, const PatchGeometry& g) {
  if (cols.rows() != g.patch_size(in) || cols.cols() != g.positions(in)) {
    throw InvalidArgument("unfold_adjoint: column matrix does not match the patch geometry");
  }
  Vector out(in.size(), 0.0);
  for_each_tap(in, g, [&](std::size_t r, std::size_t c, std::size_t p) { out[p] += cols(r, c); });
  return out;
}

Vector coverage_counts(const Shape& in, const PatchGeometry& g) {
  Vector out(in.size(), 0.0);
  for_each_tap(in, g, [&](std::size_t, std::size_t, std::size_t p) { out[p] += 1.0; });
  return out;
}

}  // namespace necode
