#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "necode/firstlayer.hpp"
#include "necode/linalg.hpp"
#include "necode/recoder.hpp"
#include "necode/shape.hpp"

namespace necode {

enum class PreprocessKind { none, resize, center_crop, random_crop, jpeg_like, blur };
std::string_view to_string(PreprocessKind k);
PreprocessKind parse_preprocess_kind(std::string_view s);

/// Input-side transformation an adversary may apply. Every kind returns an
/// image in the original layout: resize goes down to `resize_to` and back,
/// crops cut a `crop_size` window and resize it back.
struct PreprocessOp {
  PreprocessKind kind = PreprocessKind::none;
  std::size_t resize_to = 12;
  std::size_t crop_size = 14;
  int quality = 75;
  double blur_sigma = 0.5;
  std::uint64_t seed = 0;  // random-crop offsets

  void validate(const Shape& layout) const;
  /// Short label used in report rows, e.g. "resize-12".
  std::string label() const;
};

/// Default-strength operators for the robustness suite.
std::vector<PreprocessOp> default_preprocess_suite(std::uint64_t seed);

struct PreprocessResult {
  DenseMatrix images;
  /// (top, left) per sample for crops, empty otherwise.
  std::vector<std::pair<std::size_t, std::size_t>> offsets;
};

/// Row-wise application. Random-crop offsets for sample i come from stream
/// (op.seed, i).
PreprocessResult apply_preprocess(const DenseMatrix& images, const Shape& layout, const PreprocessOp& op);

/// Affine projector x ↦ mean + B·Bᵀ(x − mean) (keep) or x − B·Bᵀ(x − mean)
/// (remove), with B column-orthonormal in the native input space.
struct ProjectionBasis {
  std::string name;
  Vector mean;
  DenseMatrix basis;
  bool keep = true;
};

/// Top-`rank` principal subspace of public samples (one per row).
ProjectionBasis pca_attacker(const DenseMatrix& public_samples, std::size_t rank);
/// Random `rank`-dimensional subspace around the same public mean.
ProjectionBasis random_attacker(const DenseMatrix& public_samples, std::size_t rank, std::uint64_t seed);

DenseMatrix project_back(const DenseMatrix& images, const ProjectionBasis& basis);

/// Oracle attacker: removes the target's insensitive subspace from every
/// synthesis column. Reads the private subspace, so it is only a ceiling.
DenseMatrix remove_insensitive_component(const DenseMatrix& images, const FirstLayerOperator& op,
                                         const InsensitiveSubspace& subspace);

enum class DenoiserMode { noise2noise, noise2clean };
std::string_view to_string(DenoiserMode m);
DenoiserMode parse_denoiser_mode(std::string_view s);

struct DenoiserOptions {
  std::size_t channels = 8;
  std::size_t kernel = 5;
  std::size_t epochs = 20;
  std::size_t batch = 16;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
};

/// Residual denoiser y = x + conv(relu(conv(x))) with "same" padding on a
/// single-channel image. The output layer starts at zero so an untrained
/// denoiser is the identity.
struct Denoiser {
  Shape layout;
  std::size_t channels = 0;
  std::size_t kernel = 0;
  Vector parameters;  // w1 (channels × k²), b1, w2 (1 × channels·k²), b2

  Vector apply(std::span<const double> x) const;
  DenseMatrix apply(const DenseMatrix& images) const;
  /// Mean squared error over pixels and its gradient with respect to
  /// `parameters` for one (input, target) pair.
  double loss_and_gradient(std::span<const double> x, std::span<const double> target, Vector& grad) const;
};

Denoiser init_denoiser(const Shape& layout, const DenoiserOptions& options);

/// Adam on the pixel MSE between denoise(inputs) and targets. Throws
/// NumericalError when the loss stops being finite.
Denoiser train_denoiser(const DenseMatrix& inputs, const DenseMatrix& targets, const Shape& layout,
                        const DenoiserOptions& options);

}  // namespace necode
