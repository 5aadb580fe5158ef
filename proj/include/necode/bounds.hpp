#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "necode/firstlayer.hpp"
#include "necode/linalg.hpp"
#include "necode/recoder.hpp"

namespace necode {

enum class BoundStatus { pass, fail, vacuous };
std::string_view to_string(BoundStatus s);

/// Monte Carlo check of the retention guarantee at one (k, σ, t) point.
///
/// `k` counts the random coordinates of z (subspace rank times synthesis
/// columns). A trial violates when ‖W·δ‖ ≥ τ·√(kσ² + t); the analytic
/// ceiling on that rate is 2kσ⁴/t², vacuous once it reaches 1.
struct RetentionBoundReport {
  std::size_t k = 0;
  double sigma = 0.0;
  double t = 0.0;
  double tau = 0.0;
  double bound = 0.0;       // τ·√(kσ² + t)
  double prob_floor = 0.0;  // 1 − 2kσ⁴/t², may be negative
  std::size_t trials = 0;
  double empirical_violation_rate = 0.0;
  /// Rate of ‖z‖² ≥ kσ² + t, the event the ceiling actually controls.
  double tail_rate = 0.0;
  double max_observed_norm = 0.0;
  /// Trials where ‖W·δ‖ > τ·‖z‖ + 1e-8; must be zero.
  std::size_t deterministic_violations = 0;
  double max_deterministic_slack = 0.0;  // max of ‖W·δ‖ − τ‖z‖

  double ceiling() const { return 1.0 - prob_floor; }
  double standard_error() const;
  BoundStatus status() const;
};

/// The first `k` directions (smallest singular values) of a subspace.
InsensitiveSubspace leading_directions(const InsensitiveSubspace& subspace, std::size_t k);

/// Draws `trials` raw perturbations δ = V·z (no normalization, unit
/// amplitude), each from stream (seed, trial).
RetentionBoundReport verify_retention(const FirstLayerOperator& op, const InsensitiveSubspace& subspace,
                                      double sigma, double t, std::size_t trials, std::uint64_t seed);
/// Identifies the subspace at `tau` first; SubspaceError propagates.
RetentionBoundReport verify_retention(const FirstLayerOperator& op, double tau, double sigma, double t,
                                      std::size_t trials, std::uint64_t seed);

struct DegradationRecord {
  std::size_t index = 0;   // position in the ascending right spectrum
  std::size_t sample = 0;  // column of the lifted sample set
  double sigma1 = 0.0;
  double sigma2 = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Index-wise check of |(s₁ᵢv₁ᵢ − s₂ᵢv₂ᵢ)ᵀx| ≤ ‖x‖(τ‖W₁ − W₂‖₂/ε + ε) over
/// every qualifying i (s₁ᵢ ≤ τ) and every lifted sample column x.
struct DegradationBoundReport {
  double tau = 0.0;
  double epsilon = 0.0;
  double spectral_distance = 0.0;
  std::size_t qualifying = 0;
  std::size_t samples = 0;
  /// ε below 1e-12 with distinct operators: the right-hand side is infinite
  /// and nothing is checked. Equal operators are checked with rhs = 0.
  bool vacuous = false;
  std::vector<DegradationRecord> records;
  std::size_t violations = 0;
  double max_ratio = 0.0;  // max lhs / rhs over records

  BoundStatus status() const;
};

/// Columns the operator's synthesis matrix acts on: lifted patches on the
/// per-patch path, the flattened input otherwise.
DenseMatrix synthesis_samples(const FirstLayerOperator& op, std::span<const double> x);

/// `recoded` holds one native sample per row. Right-singular vectors of W₂
/// are sign-aligned with their W₁ counterparts.
DegradationBoundReport verify_degradation(const FirstLayerOperator& op1, const FirstLayerOperator& op2,
                                          double tau, const DenseMatrix& recoded);
DegradationBoundReport verify_degradation(const DenseMatrix& w1, const DenseMatrix& w2, double tau,
                                          const DenseMatrix& sample_columns);

/// ‖W₂·δ‖ / ‖W₁·δ‖ per perturbation row (each through its own lift); +inf
/// when the first response vanishes exactly.
Vector cross_model_ratios(const FirstLayerOperator& op1, const FirstLayerOperator& op2,
                          const DenseMatrix& deltas);
double median(Vector values);

enum class EnergyMode { sum, squared };
std::string_view to_string(EnergyMode m);
EnergyMode parse_energy_mode(std::string_view s);

struct FlatnessReport {
  Vector spectrum;  // ascending
  EnergyMode energy = EnergyMode::sum;
  /// Fewest of the largest components whose energy reaches 95% / 99%.
  std::size_t p95_count = 0;
  std::size_t p99_count = 0;
  double max = 0.0;
  double min = 0.0;
  double mean = 0.0;
  double median = 0.0;
};

FlatnessReport flatness(std::span<const double> spectrum, EnergyMode energy = EnergyMode::sum);
/// Singular values of the synthesis operator.
FlatnessReport flatness(const FirstLayerOperator& op, EnergyMode energy = EnergyMode::sum);
/// Square roots of the sample covariance eigenvalues.
FlatnessReport flatness(const DenseMatrix& samples, EnergyMode energy = EnergyMode::sum,
                        bool centered = true);

struct AlignmentReport {
  std::size_t top_k = 0;
  Vector cosines;  // descending
  double mean_cosine = 0.0;
};

/// Principal angles between the top-k right-singular subspace of `w` and the
/// top-k principal subspace of `samples` (one sample per row).
AlignmentReport alignment(const DenseMatrix& w, const DenseMatrix& samples, std::size_t top_k);
/// Same, in synthesis space: inputs are lifted with `synthesis_samples`.
AlignmentReport alignment(const FirstLayerOperator& op, const DenseMatrix& inputs, std::size_t top_k);

std::string to_json(const RetentionBoundReport& r);
std::string to_json(const DegradationBoundReport& r, bool include_records = false);
std::string to_json(const FlatnessReport& r);
std::string to_json(const AlignmentReport& r);

/// Header plus one row per grid point. With labels, a leading `model`
/// column names the operator of each row.
std::string retention_csv(std::span<const RetentionBoundReport> reports,
                          std::span<const std::string> models = {});

}  // namespace necode
