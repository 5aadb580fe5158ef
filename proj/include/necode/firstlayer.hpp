#pragma once

#include <span>

#include "necode/linalg.hpp"
#include "necode/nn.hpp"
#include "necode/patches.hpp"
#include "necode/shape.hpp"

namespace necode {

/// How a native input is mapped into the space the weight matrix acts on.
enum class LiftKind {
  identity,          // flattened input, one column
  patch_unfold,      // im2col columns of a convolution
  token_projection,  // non-overlapping patches fed to a token embedding
};

/// Which linear map of an attention front is extracted.
enum class ExtractionTarget { qkv_projection, token_embedding };

std::string_view to_string(LiftKind k);
std::string_view to_string(ExtractionTarget t);
ExtractionTarget parse_extraction_target(std::string_view s);

/// Linear first stage of a model: output = weight · lift(x) + bias.
///
/// `bias` has one column per lifted position and is kept outside `weight`
/// unless `bias_folded` is set, in which case `weight` carries it as a final
/// column and the lift appends a row of ones.
struct FirstLayerOperator {
  DenseMatrix weight;
  LiftKind lift = LiftKind::identity;
  Shape layout;
  PatchGeometry geometry;
  DenseMatrix bias;
  bool bias_folded = false;

  std::size_t input_dim() const { return layout.size(); }
  std::size_t positions() const;
  /// Rows of the lifted input (including the ones row when the bias is folded).
  std::size_t lifted_dim() const;
  /// Perturbations can be synthesized patch by patch: the lift is the identity
  /// or a partition of the input.
  bool per_patch() const;

  DenseMatrix lift_input(std::span<const double> x) const;
  /// weight · lift(x), plus the bias when it is kept outside.
  DenseMatrix apply(std::span<const double> x) const;
  /// The composed linear map vec(x) ↦ vec(weight · lift(x)), excluding bias;
  /// rows are ordered output-channel major: row o·P + p.
  DenseMatrix effective_matrix() const;
  /// `weight` on the per-patch path, `effective_matrix()` otherwise.
  DenseMatrix synthesis_operator() const;
};

/// Linearized first stage of a trained model. Folding the bias is supported
/// when it is shared by all positions (dense-front and conv-front).
FirstLayerOperator extract(const TrainedModel& model,
                           ExtractionTarget target = ExtractionTarget::qkv_projection,
                           bool fold_bias = false);

/// Least-squares preimage of a column matrix under unfold: the adjoint divided
/// by how many columns read each pixel. Exact inverse for partitions.
Vector fold_delta(const DenseMatrix& delta_cols, const Shape& layout, const PatchGeometry& g);

}  // namespace necode
