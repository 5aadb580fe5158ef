#include "necode/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "necode/error.hpp"
#include "necode/random.hpp"

namespace necode {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_psnr(const DenseMatrix& reference, const DenseMatrix& test) {
  if (reference.rows() == 0) return std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (std::size_t i = 0; i < reference.rows(); ++i) total += psnr_db(reference.row(i), test.row(i));
  return total / static_cast<double>(reference.rows());
}

void check_target(const std::vector<NamedModel>& models, std::size_t target) {
  if (target >= models.size()) throw InvalidArgument("target index out of range");
}

}  // namespace

std::string_view to_string(PairKind k) {
  switch (k) {
    case PairKind::authorized: return "authorized";
    case PairKind::transfer_match: return "TA";
    case PairKind::general: return "GA";
  }
  return "?";
}

PairKind pair_kind(const NamedModel& target, const NamedModel& evaluator) {
  if (target.name == evaluator.name) return PairKind::authorized;
  return target.model.spec.to_json() == evaluator.model.spec.to_json() ? PairKind::transfer_match
                                                                       : PairKind::general;
}

void EvalReport::append(const EvalReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  attacks.insert(attacks.end(), other.attacks.begin(), other.attacks.end());
  notes.insert(notes.end(), other.notes.begin(), other.notes.end());
}

const EvalRow* EvalReport::find(std::string_view target, std::string_view evaluator, std::string_view preprocess,
                                std::string_view attack) const {
  for (const EvalRow& r : rows) {
    if (r.target_model == target && r.eval_model == evaluator && r.preprocess == preprocess && r.attack == attack)
      return &r;
  }
  return nullptr;
}

std::vector<EvalRow> score_cells(const std::vector<NamedModel>& models, std::size_t target, const DenseMatrix& clean,
                                 const DenseMatrix& recoded, std::span<const int> labels, double psnr,
                                 const std::string& preprocess, const std::string& attack, std::uint64_t seed) {
  check_target(models, target);
  if (clean.rows() != recoded.rows() || clean.rows() != labels.size()) {
    throw InvalidArgument("clean, recoded and label counts differ");
  }
  std::vector<EvalRow> rows;
  for (const NamedModel& m : models) {
    EvalRow r;
    r.target_model = models[target].name;
    r.eval_model = m.name;
    r.psnr_db = psnr;
    r.preprocess = preprocess;
    r.attack = attack;
    r.clean_acc = accuracy(m.model, clean, labels);
    r.recoded_acc = accuracy(m.model, recoded, labels);
    r.error_rate = 1.0 - r.recoded_acc;
    r.seed = seed;
    rows.push_back(std::move(r));
  }
  const EvalRow& t = rows[target];
  const double rho = (1.0 - t.recoded_acc) - (1.0 - t.clean_acc);
  double gamma = kNaN;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (j == target) continue;
    const double margin = rows[j].error_rate - t.error_rate;
    gamma = std::isnan(gamma) ? margin : std::min(gamma, margin);
  }
  for (EvalRow& r : rows) {
    r.rho_hat = rho;
    r.gamma_hat = gamma;
  }
  return rows;
}

std::uint64_t recode_seed(const RecodingConfig& config, const std::string& target_name) {
  return derive_seed(config.seed, "recode/" + target_name);
}

NEBatch recode_for(const std::vector<NamedModel>& models, std::size_t target, const Batch& batch,
                   const RecodingConfig& config) {
  check_target(models, target);
  RecodingConfig cfg = config;
  cfg.seed = recode_seed(config, models[target].name);
  return recode_batch(batch, models[target].model, cfg);
}

EvalReport cross_matrix(const std::vector<NamedModel>& models, const Batch& batch, const RecodingConfig& config) {
  EvalReport report;
  for (std::size_t t = 0; t < models.size(); ++t) {
    const NEBatch ne = recode_for(models, t, batch, config);
    const auto rows = score_cells(models, t, batch.inputs, ne.recoded, batch.labels, ne.mean_psnr_db(), "none",
                                  "none", ne.provenance.config.seed);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  return report;
}

EvalReport sweep_strength(const std::vector<NamedModel>& models, std::size_t target, std::span<const double> grid,
                          const Batch& batch, const RecodingConfig& config) {
  check_target(models, target);
  EvalReport report;
  for (double level : grid) {
    RecodingConfig cfg = config;
    cfg.target_psnr_db = level;
    try {
      const NEBatch ne = recode_for(models, target, batch, cfg);
      const auto rows = score_cells(models, target, batch.inputs, ne.recoded, batch.labels, ne.mean_psnr_db(),
                                    "none", "none", ne.provenance.config.seed);
      report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    } catch (const CalibrationError& e) {
      report.notes.push_back("skipped " + models[target].name + " at " + std::to_string(level) + " dB: " + e.what());
    }
  }
  return report;
}

EvalReport preprocess_robustness(const std::vector<NamedModel>& models, std::size_t target, const Batch& batch,
                                 const RecodingConfig& config, std::span<const PreprocessOp> ops) {
  EvalReport report;
  const NEBatch ne = recode_for(models, target, batch, config);
  const std::uint64_t seed = ne.provenance.config.seed;
  auto rows = score_cells(models, target, batch.inputs, ne.recoded, batch.labels, ne.mean_psnr_db(), "none", "none",
                          seed);
  report.rows = rows;
  for (const PreprocessOp& op : ops) {
    const PreprocessResult clean = apply_preprocess(batch.inputs, ne.layout, op);
    const PreprocessResult recoded = apply_preprocess(ne.recoded, ne.layout, op);
    rows = score_cells(models, target, clean.images, recoded.images, batch.labels, ne.mean_psnr_db(), op.label(),
                       "none", op.kind == PreprocessKind::random_crop ? op.seed : seed);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  return report;
}

EvalReport projection_attacks(const std::vector<NamedModel>& models, std::size_t target, const Batch& batch,
                              const DenseMatrix& public_samples, const RecodingConfig& config,
                              const AttackSettings& settings) {
  EvalReport report;
  const NEBatch ne = recode_for(models, target, batch, config);
  const std::uint64_t seed = ne.provenance.config.seed;
  const double psnr = ne.mean_psnr_db();
  const std::string& name = models[target].name;
  auto add = [&](const DenseMatrix& attacked, const std::string& label) {
    const auto rows = score_cells(models, target, batch.inputs, attacked, batch.labels, psnr, "none", label, seed);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    if (label != "none")
      report.attacks.push_back({name, label, psnr, mean_psnr(batch.inputs, attacked)});
  };
  add(ne.recoded, "none");

  const std::string rank = std::to_string(settings.pca_rank);
  add(project_back(ne.recoded, pca_attacker(public_samples, settings.pca_rank)), "projection-pca-" + rank);
  add(project_back(ne.recoded,
                   random_attacker(public_samples, settings.pca_rank, derive_seed(settings.seed, "random-attacker"))),
      "projection-random-" + rank);

  // Oracle ceiling: the only place an attack reads the target's subspace.
  const FirstLayerOperator op = extract(models[target].model, config.extraction);
  const InsensitiveSubspace subspace = identify_subspace(op, config.tau, config.criterion);
  add(remove_insensitive_component(ne.recoded, op, subspace), "projection-oracle");
  return report;
}

namespace {

DenoiserOptions denoiser_options(const AttackSettings& settings, const std::string& label) {
  DenoiserOptions o = settings.denoiser;
  o.seed = derive_seed(settings.seed, "denoiser/" + label);
  return o;
}

DenseMatrix add_noise(const DenseMatrix& x, double std, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix y = x;
  for (double& v : y.data()) v += std * rng.normal();
  return y;
}

}  // namespace

EvalReport denoiser_attacks(const std::vector<NamedModel>& models, std::size_t target, const Batch& batch,
                            const Batch& attacker_batch, const RecodingConfig& config, const AttackSettings& settings,
                            std::span<const DenoiserMode> modes) {
  check_target(models, target);
  EvalReport report;
  const std::string& name = models[target].name;
  const NEBatch ne = recode_for(models, target, batch, config);
  const double psnr = ne.mean_psnr_db();
  if (batch.size() == 0) return report;

  // The attacker queries the recoding service twice on its own images.
  RecodingConfig first = config, second = config;
  first.seed = derive_seed(config.seed, "attacker-a");
  second.seed = derive_seed(config.seed, "attacker-b");
  const NEBatch a = recode_for(models, target, attacker_batch, first);
  const NEBatch b = recode_for(models, target, attacker_batch, second);

  for (DenoiserMode mode : modes) {
    const std::string label = "denoise-" + std::string(to_string(mode));
    const DenseMatrix& targets = mode == DenoiserMode::noise2noise ? b.recoded : attacker_batch.inputs;
    const Denoiser d = train_denoiser(a.recoded, targets, ne.layout, denoiser_options(settings, label + "/" + name));
    const DenseMatrix attacked = d.apply(ne.recoded);
    const auto rows = score_cells(models, target, batch.inputs, attacked, batch.labels, psnr, "none", label,
                                  ne.provenance.config.seed);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    report.attacks.push_back({name, label, psnr, mean_psnr(batch.inputs, attacked)});
  }
  return report;
}

std::vector<AttackOutcome> denoiser_control(const Batch& batch, const Batch& attacker_batch, const Shape& layout,
                                            double noise_std, const AttackSettings& settings,
                                            std::span<const DenoiserMode> modes) {
  if (!(noise_std > 0.0)) throw InvalidArgument("control noise must be positive");
  if (batch.size() == 0 || attacker_batch.size() == 0) throw InvalidArgument("control needs non-empty batches");
  const DenseMatrix noisy_a = add_noise(attacker_batch.inputs, noise_std, derive_seed(settings.seed, "control-a"));
  const DenseMatrix noisy_b = add_noise(attacker_batch.inputs, noise_std, derive_seed(settings.seed, "control-b"));
  const DenseMatrix noisy = add_noise(batch.inputs, noise_std, derive_seed(settings.seed, "control-eval"));
  const double before = mean_psnr(batch.inputs, noisy);
  std::vector<AttackOutcome> out;
  for (DenoiserMode mode : modes) {
    const std::string label = "control-" + std::string(to_string(mode));
    const DenseMatrix& targets = mode == DenoiserMode::noise2noise ? noisy_b : attacker_batch.inputs;
    const Denoiser d = train_denoiser(noisy_a, targets, layout, denoiser_options(settings, label));
    out.push_back({"gaussian", label, before, mean_psnr(batch.inputs, d.apply(noisy))});
  }
  return out;
}

}  // namespace necode
