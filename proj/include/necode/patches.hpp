#pragma once

#include <cstddef>
#include <span>

#include "necode/linalg.hpp"
#include "necode/shape.hpp"

namespace necode {

/// Square kernel sliding over a zero-padded input.
struct PatchGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height(const Shape& in) const;
  std::size_t out_width(const Shape& in) const;
  std::size_t positions(const Shape& in) const { return out_height(in) * out_width(in); }
  std::size_t patch_size(const Shape& in) const { return in.channels * kernel * kernel; }
  /// Every input pixel is covered by at most one patch and no padding is read.
  bool non_overlapping() const { return stride >= kernel && padding == 0; }
  /// Throws InvalidArgument when the kernel does not fit the padded input.
  void validate(const Shape& in) const;

  bool operator==(const PatchGeometry&) const = default;
};

/// im2col: column p holds the receptive field of output position p, ordered
/// channel-major then row-major within the kernel. Padded entries are zero.
DenseMatrix unfold(std::span<const double> x, const Shape& in, const PatchGeometry& g);

/// col2im adjoint: sums every column entry back onto the input pixel it was
/// read from (padded entries are dropped).
Vector unfold_adjoint(const DenseMatrix& cols, const Shape& in, const PatchGeometry& g);

/// Number of columns that read each input pixel.
Vector coverage_counts(const Shape& in, const PatchGeometry& g);

}  // namespace necode
