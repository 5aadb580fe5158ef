#include "necode/recoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "necode/error.hpp"
#include "necode/image.hpp"
#include "necode/parallel.hpp"
#include "necode/random.hpp"

namespace necode {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxReprojections = 5;
constexpr double kCalibrationToleranceDb = 0.05;
constexpr double kLambdaCeiling = 1e6;

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

std::size_t synthesis_columns(const FirstLayerOperator& op) {
  return op.per_patch() ? op.positions() : 1;
}

// Native perturbation for coefficients z (n × columns).
Vector to_native(const DenseMatrix& z, const InsensitiveSubspace& s, const FirstLayerOperator& op) {
  const std::size_t k = s.rank();
  const std::size_t n = s.dimension();
  DenseMatrix cols(n, z.cols());
  for (std::size_t c = 0; c < z.cols(); ++c) {
    for (std::size_t j = 0; j < k; ++j) {
      const double zj = z(j, c);
      if (zj == 0.0) continue;
      for (std::size_t r = 0; r < n; ++r) cols(r, c) += s.basis(r, j) * zj;
    }
  }
  if (op.per_patch() && op.lift != LiftKind::identity) return fold_delta(cols, op.layout, op.geometry);
  return Vector(cols.data().begin(), cols.data().end());
}

// Coefficients of the orthogonal projection of a native perturbation.
DenseMatrix project_coefficients(std::span<const double> delta, const InsensitiveSubspace& s,
                                 const FirstLayerOperator& op) {
  const DenseMatrix cols = op.per_patch() && op.lift != LiftKind::identity
                               ? unfold(delta, op.layout, op.geometry)
                               : DenseMatrix(delta.size(), 1, Vector(delta.begin(), delta.end()));
  DenseMatrix z(s.dimension(), cols.cols());
  for (std::size_t c = 0; c < cols.cols(); ++c)
    for (std::size_t j = 0; j < s.rank(); ++j) {
      double d = 0.0;
      for (std::size_t r = 0; r < s.dimension(); ++r) d += s.basis(r, j) * cols(r, c);
      z(j, c) = d;
    }
  return z;
}

}  // namespace

std::string_view to_string(Criterion c) {
  return c == Criterion::per_value ? "per-value" : "cumulative-sum";
}
std::string_view to_string(ZMode m) { return m == ZMode::gaussian ? "gaussian" : "fixed-code"; }
std::string_view to_string(ClipMode m) { return m == ClipMode::none ? "none" : "clip-reproject"; }

Criterion parse_criterion(std::string_view s) {
  if (s == "per-value") return Criterion::per_value;
  if (s == "cumulative-sum") return Criterion::cumulative_sum;
  throw InvalidArgument("unknown criterion '" + std::string(s) + "'");
}

ZMode parse_z_mode(std::string_view s) {
  if (s == "gaussian") return ZMode::gaussian;
  if (s == "fixed-code") return ZMode::fixed_code;
  throw InvalidArgument("unknown z mode '" + std::string(s) + "'");
}

ClipMode parse_clip_mode(std::string_view s) {
  if (s == "none") return ClipMode::none;
  if (s == "clip-reproject") return ClipMode::clip_reproject;
  throw InvalidArgument("unknown clip mode '" + std::string(s) + "'");
}

InsensitiveSubspace identify_subspace(const DenseMatrix& w, double tau, Criterion criterion) {
  require(tau > 0.0 && std::isfinite(tau), "tau must be positive");
  const SpectralFactors f = svd(w);
  const Vector& spectrum = f.right_spectrum;
  std::size_t k = 0;
  if (criterion == Criterion::per_value) {
    while (k < spectrum.size() && spectrum[k] <= tau) ++k;
  } else {
    double running = 0.0;
    while (k < spectrum.size() && running + spectrum[k] <= tau) running += spectrum[k++];
  }
  if (k == 0) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "tau below spectrum floor: smallest singular value %.6g exceeds tau %.6g",
                  spectrum.front(), tau);
    throw SubspaceError(msg, spectrum.front());
  }
  InsensitiveSubspace s;
  s.basis = f.v.columns(0, k);
  s.singulars.assign(spectrum.begin(), spectrum.begin() + static_cast<std::ptrdiff_t>(k));
  s.tau = tau;
  s.criterion = criterion;
  return s;
}

InsensitiveSubspace identify_subspace(const FirstLayerOperator& op, double tau, Criterion criterion) {
  if (op.bias_folded) throw InvalidArgument("synthesis needs an operator with the bias kept outside");
  return identify_subspace(op.synthesis_operator(), tau, criterion);
}

void RecodingConfig::validate() const {
  require(tau > 0.0 && std::isfinite(tau), "tau must be positive");
  require(sigma > 0.0 && std::isfinite(sigma), "sigma must be positive");
  require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be non-negative");
  if (target_psnr_db) require(!std::isnan(*target_psnr_db), "target PSNR must be a number");
}

double psnr_db(std::span<const double> reference, std::span<const double> test) {
  const double mse = mean_squared_error(reference, test);
  if (mse == 0.0) return kInf;
  return 10.0 * std::log10(1.0 / mse);
}

DenseMatrix sample_z(const InsensitiveSubspace& subspace, const RecodingConfig& config,
                     std::size_t columns, std::uint64_t stream_seed, std::uint64_t code_id) {
  require(config.sigma >= 0.0, "sigma must be non-negative");
  const std::uint64_t seed = config.z_mode == ZMode::gaussian
                                 ? stream_seed
                                 : derive_seed(derive_seed(config.seed, "code"), code_id);
  Rng rng(seed);
  DenseMatrix z(subspace.dimension(), columns);
  for (std::size_t c = 0; c < columns; ++c)
    for (std::size_t j = 0; j < subspace.rank(); ++j) z(j, c) = config.sigma * rng.normal();
  return z;
}

Recoded synthesize_from(std::span<const double> x, const DenseMatrix& z_in,
                        const InsensitiveSubspace& subspace, const RecodingConfig& config,
                        const FirstLayerOperator& op) {
  require(x.size() == op.input_dim(), "input does not match the operator layout");
  if (op.bias_folded) throw InvalidArgument("synthesis needs an operator with the bias kept outside");
  const std::size_t n = op.per_patch() ? op.weight.cols() : op.input_dim();
  if (subspace.dimension() != n || z_in.rows() != n || z_in.cols() != synthesis_columns(op)) {
    throw InvalidArgument("subspace of dimension " + std::to_string(subspace.dimension()) +
                          " does not match an operator acting on " + std::to_string(n) +
                          "-dimensional columns");
  }
  Recoded out;
  DenseMatrix z = z_in;
  Vector delta = to_native(z, subspace, op);

  const double amplitude = config.normalize ? config.lambda / std::max(1.0, norm2(delta)) : config.lambda;
  for (double& d : delta) d *= amplitude;
  for (double& v : z.data()) v *= amplitude;

  if (config.clip == ClipMode::clip_reproject) {
    for (int it = 0; it < kMaxReprojections; ++it) {
      bool clipped = false;
      Vector realized(delta.size());
      for (std::size_t i = 0; i < delta.size(); ++i) {
        const double v = x[i] + delta[i];
        const double c = std::clamp(v, 0.0, 1.0);
        clipped |= c != v;
        realized[i] = c - x[i];
      }
      if (!clipped) break;
      z = project_coefficients(realized, subspace, op);
      delta = to_native(z, subspace, op);
    }
  }

  out.recoded.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.recoded[i] = x[i] + delta[i];
  out.perturbation.realized_psnr_db = psnr_db(x, out.recoded);
  out.perturbation.z = std::move(z);
  out.perturbation.delta = std::move(delta);
  return out;
}

Recoded synthesize(std::span<const double> x, const InsensitiveSubspace& subspace,
                   const RecodingConfig& config, const FirstLayerOperator& op,
                   std::uint64_t stream_seed, std::uint64_t code_id) {
  const DenseMatrix z = sample_z(subspace, config, synthesis_columns(op), stream_seed, code_id);
  return synthesize_from(x, z, subspace, config, op);
}

namespace {

std::uint64_t code_for(const RecodingConfig& config, std::span<const int> labels, std::size_t i) {
  return config.z_mode == ZMode::fixed_code && i < labels.size() ? static_cast<std::uint64_t>(labels[i])
                                                                 : static_cast<std::uint64_t>(i);
}

double mean_batch_psnr(const DenseMatrix& inputs, std::span<const int> labels,
                       const InsensitiveSubspace& subspace, const RecodingConfig& config,
                       const FirstLayerOperator& op) {
  Vector psnr(inputs.rows());
  parallel_for(inputs.rows(), [&](std::size_t i) {
    psnr[i] = synthesize(inputs.row(i), subspace, config, op, derive_seed(config.seed, i),
                         code_for(config, labels, i))
                  .perturbation.realized_psnr_db;
  });
  double total = 0.0;
  for (double p : psnr) total += p;
  return total / static_cast<double>(psnr.size());
}

}  // namespace

double calibrate_lambda(const DenseMatrix& inputs, std::span<const int> labels,
                        const InsensitiveSubspace& subspace, const RecodingConfig& config,
                        const FirstLayerOperator& op) {
  require(config.target_psnr_db.has_value(), "calibration needs a target PSNR");
  require(inputs.rows() >= 1, "calibration needs at least one sample");
  const double target = *config.target_psnr_db;
  if (target == kInf) return 0.0;

  RecodingConfig probe = config;
  auto psnr_at = [&](double lambda) {
    probe.lambda = lambda;
    return mean_batch_psnr(inputs, labels, subspace, probe, op);
  };

  double hi = 1.0;
  double hi_psnr = psnr_at(hi);
  while (hi_psnr > target) {
    if (hi >= kLambdaCeiling) {
      throw CalibrationError("target " + std::to_string(target) +
                                 " dB is above the achievable range: lambda " +
                                 std::to_string(kLambdaCeiling) + " still gives " +
                                 std::to_string(hi_psnr) + " dB",
                             hi_psnr, kInf);
    }
    hi *= 2.0;
    hi_psnr = psnr_at(hi);
  }
  if (std::abs(hi_psnr - target) <= kCalibrationToleranceDb) return hi;
  double lo = hi / 2.0;
  double lo_psnr = psnr_at(lo);
  while (lo_psnr <= target) {
    if (lo < 1e-300) {
      throw CalibrationError("target " + std::to_string(target) + " dB is below the achievable range",
                             0.0, lo_psnr);
    }
    if (std::abs(lo_psnr - target) <= kCalibrationToleranceDb) return lo;
    hi = lo;
    lo /= 2.0;
    lo_psnr = psnr_at(lo);
  }
  double best = hi;
  double best_gap = std::abs(psnr_at(hi) - target);
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double p = psnr_at(mid);
    const double gap = std::abs(p - target);
    if (gap < best_gap) {
      best = mid;
      best_gap = gap;
    }
    if (gap <= kCalibrationToleranceDb) return mid;
    if (p > target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-15 * hi) break;
  }
  return best;
}

double NEBatch::mean_psnr_db() const {
  if (perturbations.empty()) return kInf;
  double total = 0.0;
  for (const auto& p : perturbations) total += p.realized_psnr_db;
  return total / static_cast<double>(perturbations.size());
}

NEBatch recode_batch(const Batch& batch, const TrainedModel& model, const FirstLayerOperator& op,
                     const InsensitiveSubspace& subspace, const RecodingConfig& config) {
  config.validate();
  RecodingConfig resolved = config;
  if (config.target_psnr_db && batch.size() > 0) {
    resolved.lambda = calibrate_lambda(batch.inputs, batch.labels, subspace, config, op);
  }

  NEBatch out;
  out.layout = op.layout;
  out.originals = batch.inputs;
  out.labels = batch.labels;
  out.recoded = DenseMatrix(batch.size(), op.input_dim());
  out.perturbations.resize(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    Recoded r = synthesize(batch.inputs.row(i), subspace, resolved, op, derive_seed(resolved.seed, i),
                           code_for(resolved, batch.labels, i));
    std::copy(r.recoded.begin(), r.recoded.end(), out.recoded.row(i).begin());
    out.perturbations[i] = std::move(r.perturbation);
  });

  out.provenance.model_checksum = model.checksum();
  out.provenance.model_family = std::string(to_string(model.spec.family));
  out.provenance.config = resolved;
  out.provenance.rank = subspace.rank();
  out.provenance.smallest_singular = subspace.singulars.front();
  return out;
}

NEBatch recode_batch(const Batch& batch, const TrainedModel& model, const RecodingConfig& config) {
  config.validate();
  if (batch.size() > 0 && batch.inputs.cols() != model.spec.input.size()) {
    throw InvalidArgument("batch layout does not match the model input");
  }
  const FirstLayerOperator op = extract(model, config.extraction);
  const InsensitiveSubspace subspace = identify_subspace(op, config.tau, config.criterion);
  return recode_batch(batch, model, op, subspace, config);
}

}  // namespace necode
