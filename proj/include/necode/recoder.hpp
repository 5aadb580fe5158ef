#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "necode/firstlayer.hpp"
#include "necode/linalg.hpp"
#include "necode/nn.hpp"

namespace necode {

enum class Criterion { per_value, cumulative_sum };
enum class ZMode { gaussian, fixed_code };
enum class ClipMode { none, clip_reproject };

std::string_view to_string(Criterion c);
std::string_view to_string(ZMode m);
std::string_view to_string(ClipMode m);
Criterion parse_criterion(std::string_view s);
ZMode parse_z_mode(std::string_view s);
ClipMode parse_clip_mode(std::string_view s);

/// Right-singular directions of the synthesis operator that the criterion
/// admits. Coordinates 0..k-1 of a coefficient vector address the basis
/// columns; the remaining n - k coordinates are the sensitive directions.
struct InsensitiveSubspace {
  DenseMatrix basis;  // n × k
  Vector singulars;   // ascending
  double tau = 0.0;
  Criterion criterion = Criterion::per_value;

  std::size_t dimension() const { return basis.rows(); }
  std::size_t rank() const { return basis.cols(); }
};

/// Throws SubspaceError when no direction qualifies.
InsensitiveSubspace identify_subspace(const FirstLayerOperator& op, double tau,
                                      Criterion criterion = Criterion::per_value);
InsensitiveSubspace identify_subspace(const DenseMatrix& synthesis_operator, double tau,
                                      Criterion criterion = Criterion::per_value);

struct RecodingConfig {
  double tau = 1e-4;
  double sigma = 1.0;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  /// When set, lambda is calibrated so the mean PSNR hits this value.
  std::optional<double> target_psnr_db;
  ZMode z_mode = ZMode::gaussian;
  Criterion criterion = Criterion::per_value;
  ClipMode clip = ClipMode::none;
  /// Apply δ ← λ·δ / max{1, ‖δ‖₂}; when off, δ ← λ·δ.
  bool normalize = true;
  ExtractionTarget extraction = ExtractionTarget::qkv_projection;

  void validate() const;
};

struct Perturbation {
  /// n × columns coefficients (one column per patch on the per-patch path),
  /// already multiplied by the normalization and amplitude factor so that
  /// the native perturbation is exactly fold(V·z).
  DenseMatrix z;
  Vector delta;
  double realized_psnr_db = 0.0;
};

/// PSNR in dB for signals on [0, 1]; +inf for identical inputs.
double psnr_db(std::span<const double> reference, std::span<const double> test);

/// Coefficients for one sample. Gaussian mode draws i.i.d. N(0, σ²) on the
/// insensitive coordinates from `stream_seed`; fixed-code mode derives them
/// from (config.seed, code_id) so every sample sharing a code gets the same z.
DenseMatrix sample_z(const InsensitiveSubspace& subspace, const RecodingConfig& config,
                     std::size_t columns, std::uint64_t stream_seed, std::uint64_t code_id = 0);

struct Recoded {
  Perturbation perturbation;
  Vector recoded;
};

/// Synthesizes δ for x and returns x̃ = x + δ.
Recoded synthesize(std::span<const double> x, const InsensitiveSubspace& subspace,
                   const RecodingConfig& config, const FirstLayerOperator& op,
                   std::uint64_t stream_seed, std::uint64_t code_id = 0);

/// Perturbation built from explicit coefficients (n × columns) with the
/// configured normalization, amplitude and clipping.
Recoded synthesize_from(std::span<const double> x, const DenseMatrix& z,
                        const InsensitiveSubspace& subspace, const RecodingConfig& config,
                        const FirstLayerOperator& op);

/// Bisection on λ until the mean per-sample PSNR is within 0.05 dB of the
/// target. Throws CalibrationError when the target cannot be bracketed.
double calibrate_lambda(const DenseMatrix& inputs, std::span<const int> labels,
                        const InsensitiveSubspace& subspace, const RecodingConfig& config,
                        const FirstLayerOperator& op);

struct Provenance {
  std::uint64_t model_checksum = 0;
  std::string model_family;
  RecodingConfig config;  // lambda resolved; target kept for the record
  std::size_t rank = 0;
  double smallest_singular = 0.0;
  bool quantized_export = false;
};

struct NEBatch {
  Shape layout;
  DenseMatrix originals;
  DenseMatrix recoded;
  std::vector<int> labels;
  std::vector<Perturbation> perturbations;
  Provenance provenance;

  std::size_t size() const { return labels.size(); }
  double mean_psnr_db() const;
};

/// Extract, identify, calibrate when requested, then synthesize every sample
/// with its own stream (config.seed, sample index).
NEBatch recode_batch(const Batch& batch, const TrainedModel& model, const RecodingConfig& config);

/// Same, reusing an already identified subspace.
NEBatch recode_batch(const Batch& batch, const TrainedModel& model, const FirstLayerOperator& op,
                     const InsensitiveSubspace& subspace, const RecodingConfig& config);

std::string provenance_json(const Provenance& p);
Provenance provenance_from_json(std::string_view text);

Bytes serialize_batch(const NEBatch& batch);
NEBatch deserialize_batch(std::span<const std::uint8_t> bytes);
void save_batch(const NEBatch& batch, const std::filesystem::path& path);
NEBatch load_batch(const std::filesystem::path& path);

/// 8-bit grayscale PNG of one sample (channels stacked vertically), values
/// clamped to [0, 1] and rounded.
Bytes encode_png(std::span<const double> image, const Shape& layout);
/// Writes recoded[i] for every sample as <dir>/<prefix><i>.png and marks the
/// batch provenance as quantized.
void export_png(NEBatch& batch, const std::filesystem::path& dir, const std::string& prefix = "ne_");

}  // namespace necode
