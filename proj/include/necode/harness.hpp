#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "necode/nn.hpp"
#include "necode/preprocess.hpp"
#include "necode/recoder.hpp"

namespace necode {

struct NamedModel {
  std::string name;
  TrainedModel model;
};

/// authorized: the target itself; transfer-match: same specification with
/// different weights; general: a different specification.
enum class PairKind { authorized, transfer_match, general };
std::string_view to_string(PairKind k);
PairKind pair_kind(const NamedModel& target, const NamedModel& evaluator);

/// One (target, evaluator, strength, preprocessing, attack) cell. Error rate
/// is the utility measure (smaller is better); accuracy is kept alongside.
///
/// rho_hat = m(f⋆, x̃) − m(f⋆, x) on the target; gamma_hat = min over
/// non-target evaluators of m(f′, x̃) − m(f⋆, x̃), NaN without one. Both are
/// shared by every row of the same (target, strength, preprocess, attack)
/// group.
struct EvalRow {
  std::string target_model;
  std::string eval_model;
  double psnr_db = 0.0;  // realized mean PSNR of the recoded batch
  std::string preprocess = "none";
  std::string attack = "none";
  double clean_acc = 0.0;
  double recoded_acc = 0.0;
  double error_rate = 0.0;
  double rho_hat = 0.0;
  double gamma_hat = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const EvalRow&) const = default;
};

/// PSNR to the clean images before and after an attack (or of the Gaussian
/// control), averaged over samples.
struct AttackOutcome {
  std::string target_model;
  std::string attack;
  double psnr_before = 0.0;
  double psnr_after = 0.0;
  double gain_db() const { return psnr_after - psnr_before; }
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<AttackOutcome> attacks;
  /// Skipped strength levels and similar diagnostics.
  std::vector<std::string> notes;

  void append(const EvalReport& other);
  /// First row matching the key, or nullptr.
  const EvalRow* find(std::string_view target, std::string_view evaluator, std::string_view preprocess = "none",
                      std::string_view attack = "none") const;
};

/// Scores every model on `clean` and `recoded` (same rows, same labels) and
/// fills the group statistics for `models[target]`.
std::vector<EvalRow> score_cells(const std::vector<NamedModel>& models, std::size_t target, const DenseMatrix& clean,
                                 const DenseMatrix& recoded, std::span<const int> labels, double psnr_db,
                                 const std::string& preprocess, const std::string& attack, std::uint64_t seed);

/// Recoding seed for a target: substream of the configured root seed labelled
/// with the model name, so every target gets its own perturbations.
std::uint64_t recode_seed(const RecodingConfig& config, const std::string& target_name);

/// NEs of `batch` for models[target] under `config` (seed per `recode_seed`).
NEBatch recode_for(const std::vector<NamedModel>& models, std::size_t target, const Batch& batch,
                   const RecodingConfig& config);

/// Full target × evaluator grid at the configured strength.
EvalReport cross_matrix(const std::vector<NamedModel>& models, const Batch& batch, const RecodingConfig& config);

/// One group per PSNR level for models[target]. +inf means no perturbation.
/// Levels whose calibration fails are skipped with a note.
EvalReport sweep_strength(const std::vector<NamedModel>& models, std::size_t target, std::span<const double> psnr_grid,
                          const Batch& batch, const RecodingConfig& config);

/// The same NEs scored unpreprocessed and under each operator; clean
/// accuracy is measured on the equally preprocessed clean batch.
EvalReport preprocess_robustness(const std::vector<NamedModel>& models, std::size_t target, const Batch& batch,
                                 const RecodingConfig& config, std::span<const PreprocessOp> ops);

struct AttackSettings {
  std::size_t pca_rank = 64;
  std::uint64_t seed = 0;
  DenoiserOptions denoiser;
};

/// Projection-back attacks on the target's NEs: PCA of `public_samples`,
/// a random subspace of the same rank (control) and the oracle that removes
/// the private subspace (ceiling). Attack rows keep unattacked clean accuracy.
EvalReport projection_attacks(const std::vector<NamedModel>& models, std::size_t target, const Batch& batch,
                              const DenseMatrix& public_samples, const RecodingConfig& config,
                              const AttackSettings& settings);

/// Denoiser attacks: trained on NEs of `attacker_batch` (noise2noise pairs
/// two independent recodings, noise2clean pairs NE with clean) and applied
/// to the target's NEs of `batch`.
EvalReport denoiser_attacks(const std::vector<NamedModel>& models, std::size_t target, const Batch& batch,
                            const Batch& attacker_batch, const RecodingConfig& config, const AttackSettings& settings,
                            std::span<const DenoiserMode> modes);

/// Gaussian-noise sanity control for the denoiser, independent of any model.
std::vector<AttackOutcome> denoiser_control(const Batch& batch, const Batch& attacker_batch, const Shape& layout,
                                            double noise_std, const AttackSettings& settings,
                                            std::span<const DenoiserMode> modes);

/// Exact CSV column order.
inline constexpr const char* kEvalCsvHeader =
    "target_model,eval_model,psnr_db,preprocess,attack,clean_acc,recoded_acc,error_rate,rho_hat,gamma_hat,seed";

std::string to_csv(std::span<const EvalRow> rows);
/// Parses text written by `to_csv`; throws IoError on a malformed header or row.
std::vector<EvalRow> parse_csv(std::string_view text);

/// Structured summary: rows, attack outcomes, notes and an opaque config echo.
std::string summary_json(const EvalReport& report, std::string_view config_echo = {});

}  // namespace necode
