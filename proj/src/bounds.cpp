#include "necode/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>

#include "json.hpp"
#include "necode/error.hpp"
#include "necode/parallel.hpp"
#include "necode/random.hpp"

namespace necode {

namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDeterministicSlack = 1e-8;
constexpr double kGapFloor = 1e-12;

json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

json numbers(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

std::string_view to_string(BoundStatus s) {
  switch (s) {
    case BoundStatus::pass: return "PASS";
    case BoundStatus::fail: return "FAIL";
    case BoundStatus::vacuous: return "VACUOUS";
  }
  return "?";
}

double RetentionBoundReport::standard_error() const {
  if (trials == 0) return 0.0;
  const double p = empirical_violation_rate;
  return std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

BoundStatus RetentionBoundReport::status() const {
  if (deterministic_violations > 0) return BoundStatus::fail;
  const double c = ceiling();
  if (c >= 1.0) return BoundStatus::vacuous;
  return empirical_violation_rate <= std::max(0.0, c) + 3.0 * standard_error() ? BoundStatus::pass
                                                                               : BoundStatus::fail;
}

InsensitiveSubspace leading_directions(const InsensitiveSubspace& subspace, std::size_t k) {
  if (k == 0 || k > subspace.rank()) {
    throw InvalidArgument("cannot keep " + std::to_string(k) + " of " + std::to_string(subspace.rank()) +
                          " directions");
  }
  InsensitiveSubspace out = subspace;
  out.basis = subspace.basis.columns(0, k);
  out.singulars.resize(k);
  return out;
}

RetentionBoundReport verify_retention(const FirstLayerOperator& op, const InsensitiveSubspace& subspace,
                                      double sigma, double t, std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw InvalidArgument("retention check needs at least one trial");
  if (!(t > 0.0)) throw InvalidArgument("t must be positive");
  if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be non-negative");

  const std::size_t columns = op.per_patch() ? op.positions() : 1;
  RetentionBoundReport r;
  r.k = subspace.rank() * columns;
  r.sigma = sigma;
  r.t = t;
  r.tau = subspace.tau;
  r.trials = trials;
  const double k = static_cast<double>(r.k);
  const double variance_scale = k * sigma * sigma;
  r.bound = r.tau * std::sqrt(variance_scale + t);
  r.prob_floor = 1.0 - 2.0 * k * std::pow(sigma, 4) / (t * t);

  RecodingConfig cfg;
  cfg.tau = subspace.tau;
  cfg.sigma = sigma;
  cfg.lambda = 1.0;
  cfg.normalize = false;
  const Vector origin(op.input_dim(), 0.0);

  Vector response(trials), z_norm(trials);
  parallel_for(trials, [&](std::size_t i) {
    const Recoded rec = synthesize(origin, subspace, cfg, op, derive_seed(seed, i));
    response[i] = (op.weight * op.lift_input(rec.perturbation.delta)).frobenius_norm();
    z_norm[i] = rec.perturbation.z.frobenius_norm();
  });

  std::size_t violations = 0, tail = 0;
  r.max_deterministic_slack = -kInf;
  for (std::size_t i = 0; i < trials; ++i) {
    if (response[i] >= r.bound) ++violations;
    if (z_norm[i] * z_norm[i] >= variance_scale + t) ++tail;
    const double slack = response[i] - r.tau * z_norm[i];
    if (slack > kDeterministicSlack) ++r.deterministic_violations;
    r.max_deterministic_slack = std::max(r.max_deterministic_slack, slack);
    r.max_observed_norm = std::max(r.max_observed_norm, response[i]);
  }
  r.empirical_violation_rate = static_cast<double>(violations) / static_cast<double>(trials);
  r.tail_rate = static_cast<double>(tail) / static_cast<double>(trials);
  return r;
}

RetentionBoundReport verify_retention(const FirstLayerOperator& op, double tau, double sigma, double t,
                                      std::size_t trials, std::uint64_t seed) {
  return verify_retention(op, identify_subspace(op, tau), sigma, t, trials, seed);
}

BoundStatus DegradationBoundReport::status() const {
  if (vacuous) return BoundStatus::vacuous;
  return violations == 0 ? BoundStatus::pass : BoundStatus::fail;
}

DenseMatrix synthesis_samples(const FirstLayerOperator& op, std::span<const double> x) {
  if (x.size() != op.input_dim()) throw InvalidArgument("sample does not match the operator layout");
  if (op.per_patch() && !op.bias_folded) return op.lift_input(x);
  return DenseMatrix(x.size(), 1, Vector(x.begin(), x.end()));
}

DegradationBoundReport verify_degradation(const DenseMatrix& w1, const DenseMatrix& w2, double tau,
                                          const DenseMatrix& samples) {
  if (w1.rows() != w2.rows() || w1.cols() != w2.cols()) {
    throw InvalidArgument("operators must have the same dimensions");
  }
  if (samples.rows() != w1.cols()) throw InvalidArgument("sample columns do not match the operators");
  if (!(tau > 0.0)) throw InvalidArgument("tau must be positive");

  const SpectralFactors f1 = svd(w1);
  const SpectralFactors f2 = svd(w2);
  const Vector& s1 = f1.right_spectrum;
  const Vector& s2 = f2.right_spectrum;
  const std::size_t n = s1.size();

  DegradationBoundReport r;
  r.tau = tau;
  r.spectral_distance = spectral_norm(w1 - w2);
  r.samples = samples.cols();
  std::vector<std::size_t> qualifying;
  for (std::size_t i = 0; i < n && s1[i] <= tau; ++i) qualifying.push_back(i);
  r.qualifying = qualifying.size();

  r.epsilon = kInf;
  for (std::size_t i : qualifying)
    for (double b : s2) r.epsilon = std::min(r.epsilon, std::abs(s1[i] - b));
  if (qualifying.empty()) return r;
  // Equal operators: both sides vanish, so the check holds with rhs = 0.
  const bool identical = r.spectral_distance == 0.0;
  if (!identical && r.epsilon < kGapFloor) {
    r.vacuous = true;
    return r;
  }

  Vector norms(samples.cols());
  for (std::size_t c = 0; c < samples.cols(); ++c) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += samples(j, c) * samples(j, c);
    norms[c] = std::sqrt(acc);
  }
  const double factor = identical ? 0.0 : tau * r.spectral_distance / r.epsilon + r.epsilon;

  for (std::size_t i : qualifying) {
    Vector v1 = f1.v.column(i);
    Vector v2 = f2.v.column(i);
    if (dot(v1, v2) < 0.0)
      for (double& v : v2) v = -v;
    Vector diff(n);
    for (std::size_t j = 0; j < n; ++j) diff[j] = s1[i] * v1[j] - s2[i] * v2[j];
    const Vector proj = transpose_multiply(samples, diff);
    for (std::size_t c = 0; c < samples.cols(); ++c) {
      DegradationRecord rec{i, c, s1[i], s2[i], std::abs(proj[c]), norms[c] * factor};
      if (rec.lhs > rec.rhs) ++r.violations;
      if (rec.rhs > 0.0) r.max_ratio = std::max(r.max_ratio, rec.lhs / rec.rhs);
      r.records.push_back(rec);
    }
  }
  return r;
}

DegradationBoundReport verify_degradation(const FirstLayerOperator& op1, const FirstLayerOperator& op2,
                                          double tau, const DenseMatrix& recoded) {
  if (op1.per_patch() != op2.per_patch() || op1.layout != op2.layout) {
    throw InvalidArgument("operators must act on the same synthesis space");
  }
  const DenseMatrix w1 = op1.synthesis_operator();
  const DenseMatrix w2 = op2.synthesis_operator();
  std::vector<DenseMatrix> parts;
  std::size_t total = 0;
  for (std::size_t i = 0; i < recoded.rows(); ++i) {
    parts.push_back(synthesis_samples(op1, recoded.row(i)));
    total += parts.back().cols();
  }
  DenseMatrix samples(w1.cols(), total);
  std::size_t at = 0;
  for (const DenseMatrix& p : parts) {
    for (std::size_t c = 0; c < p.cols(); ++c, ++at)
      for (std::size_t r = 0; r < p.rows(); ++r) samples(r, at) = p(r, c);
  }
  return verify_degradation(w1, w2, tau, samples);
}

Vector cross_model_ratios(const FirstLayerOperator& op1, const FirstLayerOperator& op2,
                          const DenseMatrix& deltas) {
  Vector out(deltas.rows());
  for (std::size_t i = 0; i < deltas.rows(); ++i) {
    const double a = (op1.weight * op1.lift_input(deltas.row(i))).frobenius_norm();
    const double b = (op2.weight * op2.lift_input(deltas.row(i))).frobenius_norm();
    out[i] = a == 0.0 ? (b == 0.0 ? 1.0 : kInf) : b / a;
  }
  return out;
}

double median(Vector values) {
  if (values.empty()) throw InvalidArgument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

std::string_view to_string(EnergyMode m) { return m == EnergyMode::sum ? "sum" : "squared"; }

EnergyMode parse_energy_mode(std::string_view s) {
  if (s == "sum") return EnergyMode::sum;
  if (s == "squared") return EnergyMode::squared;
  throw InvalidArgument("unknown energy mode '" + std::string(s) + "'");
}

FlatnessReport flatness(std::span<const double> spectrum, EnergyMode energy) {
  if (spectrum.empty()) throw InvalidArgument("flatness of an empty spectrum");
  FlatnessReport r;
  r.spectrum.assign(spectrum.begin(), spectrum.end());
  std::sort(r.spectrum.begin(), r.spectrum.end());
  r.energy = energy;
  const std::size_t n = r.spectrum.size();
  r.min = r.spectrum.front();
  r.max = r.spectrum.back();
  r.mean = std::accumulate(r.spectrum.begin(), r.spectrum.end(), 0.0) / static_cast<double>(n);
  r.median = median(r.spectrum);

  auto weight = [&](double s) { return energy == EnergyMode::sum ? s : s * s; };
  double total = 0.0;
  for (double s : r.spectrum) total += weight(s);
  // Relative slack so a fraction that is reached exactly is not missed to rounding.
  auto count_for = [&](double fraction) {
    double acc = 0.0;
    for (std::size_t c = 1; c <= n; ++c) {
      acc += weight(r.spectrum[n - c]);
      if (acc >= fraction * total * (1.0 - 1e-12)) return c;
    }
    return n;
  };
  r.p95_count = count_for(0.95);
  r.p99_count = count_for(0.99);
  return r;
}

FlatnessReport flatness(const FirstLayerOperator& op, EnergyMode energy) {
  return flatness(svd(op.synthesis_operator()).s, energy);
}

FlatnessReport flatness(const DenseMatrix& samples, EnergyMode energy, bool centered) {
  const CovarianceSpectrum c = pca(samples, centered);
  Vector s(c.eigvals.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::sqrt(std::max(0.0, c.eigvals[i]));
  return flatness(s, energy);
}

AlignmentReport alignment(const DenseMatrix& w, const DenseMatrix& samples, std::size_t top_k) {
  const std::size_t n = w.cols();
  if (samples.cols() != n) throw InvalidArgument("samples do not match the operator");
  if (top_k == 0 || top_k > std::min(w.rows(), n)) {
    throw InvalidArgument("top_k must be in [1, " + std::to_string(std::min(w.rows(), n)) + "]");
  }
  const SpectralFactors f = svd(w);
  const CovarianceSpectrum c = pca(samples);
  AlignmentReport r;
  r.top_k = top_k;
  r.cosines = principal_angles(f.v.columns(n - top_k, top_k), c.eigvecs.columns(n - top_k, top_k));
  r.mean_cosine = std::accumulate(r.cosines.begin(), r.cosines.end(), 0.0) / static_cast<double>(top_k);
  return r;
}

AlignmentReport alignment(const FirstLayerOperator& op, const DenseMatrix& inputs, std::size_t top_k) {
  const DenseMatrix w = op.synthesis_operator();
  std::vector<double> rows;
  std::size_t count = 0;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const DenseMatrix cols = synthesis_samples(op, inputs.row(i));
    for (std::size_t c = 0; c < cols.cols(); ++c, ++count)
      for (std::size_t r = 0; r < cols.rows(); ++r) rows.push_back(cols(r, c));
  }
  return alignment(w, DenseMatrix(count, w.cols(), std::move(rows)), top_k);
}

std::string to_json(const RetentionBoundReport& r) {
  json j;
  j["k"] = r.k;
  j["sigma"] = number(r.sigma);
  j["t"] = number(r.t);
  j["tau"] = number(r.tau);
  j["bound"] = number(r.bound);
  j["prob_floor"] = number(r.prob_floor);
  j["ceiling"] = number(r.ceiling());
  j["trials"] = r.trials;
  j["empirical_violation_rate"] = number(r.empirical_violation_rate);
  j["tail_rate"] = number(r.tail_rate);
  j["max_observed_norm"] = number(r.max_observed_norm);
  j["deterministic_violations"] = r.deterministic_violations;
  j["max_deterministic_slack"] = number(r.max_deterministic_slack);
  j["status"] = to_string(r.status());
  return j.dump(2);
}

std::string to_json(const DegradationBoundReport& r, bool include_records) {
  json j;
  j["tau"] = number(r.tau);
  j["epsilon"] = number(r.epsilon);
  j["spectral_distance"] = number(r.spectral_distance);
  j["qualifying"] = r.qualifying;
  j["samples"] = r.samples;
  j["vacuous"] = r.vacuous;
  j["violations"] = r.violations;
  j["max_ratio"] = number(r.max_ratio);
  j["status"] = to_string(r.status());
  if (include_records) {
    json rec = json::array();
    for (const auto& d : r.records) {
      rec.push_back({{"index", d.index},
                     {"sample", d.sample},
                     {"sigma1", number(d.sigma1)},
                     {"sigma2", number(d.sigma2)},
                     {"lhs", number(d.lhs)},
                     {"rhs", number(d.rhs)}});
    }
    j["records"] = std::move(rec);
  }
  return j.dump(2);
}

std::string to_json(const FlatnessReport& r) {
  json j;
  j["energy"] = to_string(r.energy);
  j["n"] = r.spectrum.size();
  j["p95_count"] = r.p95_count;
  j["p99_count"] = r.p99_count;
  j["max"] = number(r.max);
  j["min"] = number(r.min);
  j["mean"] = number(r.mean);
  j["median"] = number(r.median);
  j["spectrum"] = numbers(r.spectrum);
  return j.dump(2);
}

std::string to_json(const AlignmentReport& r) {
  json j;
  j["top_k"] = r.top_k;
  j["cosines"] = numbers(r.cosines);
  j["mean_cosine"] = number(r.mean_cosine);
  return j.dump(2);
}

std::string retention_csv(std::span<const RetentionBoundReport> reports, std::span<const std::string> models) {
  if (!models.empty() && models.size() != reports.size()) {
    throw InvalidArgument("one model label per retention report is required");
  }
  std::string out = models.empty() ? "" : "model,";
  out += "k,sigma,t,tau,bound,ceiling,trials,violation_rate,tail_rate,max_norm,deterministic_violations,status\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (!models.empty()) out += models[i] + ',';
    out += std::to_string(r.k) + ',' + format_double(r.sigma) + ',' + format_double(r.t) + ',' +
           format_double(r.tau) + ',' + format_double(r.bound) + ',' + format_double(r.ceiling()) + ',' +
           std::to_string(r.trials) + ',' + format_double(r.empirical_violation_rate) + ',' +
           format_double(r.tail_rate) + ',' + format_double(r.max_observed_norm) + ',' +
           std::to_string(r.deterministic_violations) + ',' + std::string(to_string(r.status())) + '\n';
  }
  return out;
}

}  // namespace necode
