#pragma once

// Forward and backward passes shared by training, inference and operator
// extraction. Internal to the library.

#include <span>
#include <vector>

#include "necode/nn.hpp"
#include "necode/patches.hpp"
#include "necode/random.hpp"

namespace necode::detail {

/// Per-sample intermediate values kept for the backward pass.
struct Trace {
  DenseMatrix cols;     // unfolded patches
  DenseMatrix front;    // conv pre-activation, or attention tokens
  DenseMatrix qkv;      // attention projections, 3d × T
  DenseMatrix weights;  // attention softmax, T × T
  DenseMatrix mixed;    // attention output before activation, d × T
  std::vector<std::size_t> argmax;  // pooled index -> source index
  std::vector<Vector> pre;   // fully connected pre-activations (hidden layers only)
  std::vector<Vector> act;   // act[0] is the flattened front output
  Vector logits;
};

class Network {
 public:
  explicit Network(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<ParameterBlock>& layout() const { return layout_; }
  std::size_t parameter_count() const { return count_; }
  const ParameterBlock& block(std::string_view name) const;

  void initialize(std::span<double> params, Rng& rng) const;
  void forward(std::span<const double> params, std::span<const double> x, Trace& t) const;
  /// Accumulates into grad.
  void backward(std::span<const double> params, const Trace& t, std::span<const double> dlogits,
                std::span<double> grad) const;
  DenseMatrix first_stage(std::span<const double> params, std::span<const double> x,
                          bool embedding_only) const;

  PatchGeometry geometry() const { return geometry_; }

 private:
  void add_block(std::string name, std::size_t rows, std::size_t cols);
  double activate(double z) const;
  double activation_slope(double z, double a) const;

  ModelSpec spec_;
  std::vector<ParameterBlock> layout_;
  std::size_t count_ = 0;
  PatchGeometry geometry_;
  std::size_t positions_ = 1;   // conv output positions or attention tokens
  std::size_t grid_w_ = 1;      // conv output width
  std::size_t grid_h_ = 1;
  std::size_t pooled_h_ = 1;
  std::size_t pooled_w_ = 1;
  std::size_t flat_dim_ = 0;    // input width of the fully connected stack
  std::size_t fc_first_ = 0;    // index of fc0.weight in layout_
};

}  // namespace necode::detail
