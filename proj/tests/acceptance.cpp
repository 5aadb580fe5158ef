// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//
// Exit status is 0 when every failing criterion is listed in --expect-fail
// and non-zero otherwise, so a run without that flag fails whenever any
// criterion fails.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "necode/binary_io.hpp"
#include "necode/bounds.hpp"
#include "necode/config.hpp"
#include "necode/firstlayer.hpp"
#include "necode/linalg.hpp"
#include "necode/patches.hpp"
#include "necode/pipeline.hpp"
#include "necode/random.hpp"
#include "oracles.hpp"

using namespace necode;
using necode::testing::compose;
using necode::testing::power_iteration_norm;
using necode::testing::random_matrix;
using necode::testing::random_orthogonal;
using necode::testing::to_eigen;

namespace fs = std::filesystem;

namespace tol {
constexpr double kSvdRelative = 1e-8;
constexpr double kSvdResidual = 1e-8;
constexpr double kSvdSeconds = 30;
constexpr double kConvRelative = 1e-6;
constexpr double kConvSeconds = 30;
constexpr std::size_t kDeterministicChecks = 100000;
constexpr double kDeterministicSeconds = 120;
constexpr std::size_t kRetentionTrials = 10000;
constexpr double kRetentionSeconds = 300;
constexpr double kDegradationGapFloor = 1e-12;
constexpr double kDegradationSeconds = 120;
constexpr double kCalibrationDb = 0.25;
constexpr double kAuthorizedDrop = 0.02;
constexpr double kSweepAuthorizedDrop = 0.03;
constexpr double kUnauthorizedMargin = 0.10;
constexpr double kEndToEndSeconds = 900;
constexpr double kPreprocessAuthorizedDrop = 0.03;
constexpr double kControlGainDb = 5.0;
constexpr double kDenoiserGainDb = 2.0;
constexpr double kTargetPsnr = 20.0;
}  // namespace tol

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------ SVD oracle

Outcome svd_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240501);
  double worst_value = 0.0, worst_recon = 0.0, worst_orth = 0.0;
  std::size_t bad = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t m = i == 0 ? 64 : 1 + rng.below(64);
    const std::size_t n = i == 0 ? 96 : 1 + rng.below(96);
    const DenseMatrix w = random_matrix(m, n, 1000 + static_cast<std::uint64_t>(i));
    const SpectralFactors f = svd(w);

    // Oracle: eigenvalues of W·Wᵀ; the largest min(m, n) are the squared
    // singular values.
    const Eigen::MatrixXd a = to_eigen(w);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a * a.transpose());
    std::vector<double> oracle;
    for (Eigen::Index j = 0; j < es.eigenvalues().size(); ++j) oracle.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(j))));
    std::sort(oracle.begin(), oracle.end());
    oracle.erase(oracle.begin(), oracle.end() - static_cast<std::ptrdiff_t>(std::min(m, n)));

    const double smax = oracle.back();
    double value_err = 0.0;
    for (std::size_t j = 0; j < oracle.size(); ++j) value_err = std::max(value_err, std::abs(f.s[j] - oracle[j]) / smax);
    const double recon = (f.reconstruct() - w).frobenius_norm() / w.frobenius_norm();
    const double orth = std::max(orthogonality_residual(f.u), orthogonality_residual(f.v));
    worst_value = std::max(worst_value, value_err);
    worst_recon = std::max(worst_recon, recon);
    worst_orth = std::max(worst_orth, orth);
    if (value_err > tol::kSvdRelative || recon > tol::kSvdResidual || orth > tol::kSvdResidual) ++bad;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < tol::kSvdSeconds,
          fmt("200 matrices up to 64x96; max |ds|/smax %.2e, reconstruction %.2e, orthogonality %.2e, %zu over "
              "tolerance, %.1f s",
              worst_value, worst_recon, worst_orth, bad, secs)};
}

// ------------------------------------------------------------ convolution

DenseMatrix direct_conv(std::span<const double> x, const Shape& in, const DenseMatrix& kernel, const PatchGeometry& g) {
  const std::size_t k = g.kernel;
  const std::size_t oh = (in.height + 2 * g.padding - k) / g.stride + 1;
  const std::size_t ow = (in.width + 2 * g.padding - k) / g.stride + 1;
  DenseMatrix out(kernel.rows(), oh * ow);
  for (std::size_t o = 0; o < kernel.rows(); ++o)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (std::size_t c = 0; c < in.channels; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long y = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
              const long xx = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
              if (y < 0 || xx < 0 || y >= static_cast<long>(in.height) || xx >= static_cast<long>(in.width)) continue;
              s += kernel(o, (c * k + ky) * k + kx) *
                   x[(c * in.height + static_cast<std::size_t>(y)) * in.width + static_cast<std::size_t>(xx)];
            }
        out(o, oy * ow + ox) = s;
      }
  return out;
}

Outcome conv_linearization() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(777);
  double worst = 0.0;
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const Shape in{1 + rng.below(3), 3 + rng.below(10), 3 + rng.below(10)};
    PatchGeometry g;
    g.kernel = 1 + rng.below(std::min<std::size_t>(5, std::min(in.height, in.width)));
    g.stride = 1 + rng.below(3);
    g.padding = rng.below(g.kernel);
    const DenseMatrix kernel = random_matrix(1 + rng.below(4), g.patch_size(in), 5000 + static_cast<std::uint64_t>(i));
    const DenseMatrix xm = random_matrix(1, in.channels * in.height * in.width, 9000 + static_cast<std::uint64_t>(i));
    const DenseMatrix via_unfold = kernel * unfold(xm.row(0), in, g);
    const DenseMatrix direct = direct_conv(xm.row(0), in, kernel, g);
    const double rel = (via_unfold - direct).frobenius_norm() / std::max(1e-300, direct.frobenius_norm());
    worst = std::max(worst, rel);
    if (!(rel <= tol::kConvRelative)) ++bad;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < tol::kConvSeconds,
          fmt("1000 cases; max relative error %.2e, %zu over tolerance, %.1f s", worst, bad, secs)};
}

// ------------------------------------------------------------ shared desk run

struct DeskRun {
  RunConfig config;
  LabeledDataset data;
  std::vector<NamedModel> models;
  EvalReport report;
  double seconds = 0.0;
};

double chance(const DeskRun& run) { return 1.0 / static_cast<double>(run.config.classes()); }

Outcome retention_deterministic(const DeskRun& run) {
  const auto t0 = std::chrono::steady_clock::now();
  const RecodingConfig rc = run.config.resolved_recoder();
  std::size_t checks = 0, violations = 0;
  double slack = -INFINITY;
  std::string per;
  // Grid order puts one model per family first, reseeds after.
  const std::size_t families = std::min(run.config.models.families.size(), run.models.size());
  const std::size_t per_family = (tol::kDeterministicChecks + families - 1) / std::max<std::size_t>(1, families);
  for (std::size_t i = 0; i < families; ++i) {
    const NamedModel& m = run.models[i];
    const FirstLayerOperator op = extract(m.model, rc.extraction);
    const InsensitiveSubspace sub = identify_subspace(op, rc.tau, rc.criterion);
    const auto r = verify_retention(op, sub, 0.1, 1.0, per_family, derive_seed(run.config.seed, "accept/det/" + m.name));
    checks += r.trials;
    violations += r.deterministic_violations;
    slack = std::max(slack, r.max_deterministic_slack);
    per += " " + m.name + "=" + std::to_string(r.deterministic_violations);
  }
  const double secs = seconds_since(t0);
  return {checks >= tol::kDeterministicChecks && violations == 0 && families == 3 && secs < tol::kDeterministicSeconds,
          fmt("%zu checks over %zu families, violations:%s, max slack %.2e, %.1f s", checks, families, per.c_str(),
              slack, secs)};
}

Outcome retention_probabilistic(const VerifyResult& v, double secs) {
  std::size_t checked = 0, failed = 0, vacuous = 0, thin = 0;
  double worst_margin = -INFINITY;
  for (const auto& r : v.retention) {
    if (r.status() == BoundStatus::vacuous) {
      ++vacuous;
      continue;
    }
    ++checked;
    if (r.trials < tol::kRetentionTrials) ++thin;
    if (r.status() == BoundStatus::fail) ++failed;
    worst_margin = std::max(worst_margin, r.empirical_violation_rate - (r.ceiling() + 3.0 * r.standard_error()));
  }
  return {failed == 0 && thin == 0 && checked > 0 && secs < tol::kRetentionSeconds,
          fmt("%zu non-vacuous points (%zu vacuous), %zu failing, %zu under %zu trials, worst rate - (ceiling + "
              "3 se) = %.3g, %.1f s",
              checked, vacuous, failed, thin, tol::kRetentionTrials, worst_margin, secs)};
}

// ------------------------------------------------------------ degradation

FirstLayerOperator dense_operator(const DenseMatrix& w) {
  FirstLayerOperator op;
  op.weight = w;
  op.lift = LiftKind::identity;
  op.layout = {1, 1, w.cols()};
  op.bias = DenseMatrix(w.rows(), 1);
  return op;
}

Outcome degradation_bound(const DeskRun& run, const VerifyResult& grid) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<DegradationBoundReport> reports;
  std::vector<std::string> names;

  // Constructed pairs: a few singular values under tau, a seeded perturbation
  // of controlled spectral norm.
  const std::vector<std::tuple<std::size_t, std::size_t, double>> constructed{
      {6, 2, 1e-7}, {8, 2, 1e-6}, {10, 3, 1e-6}, {12, 2, 1e-5}, {16, 3, 1e-6}, {20, 4, 1e-7}};
  for (std::size_t p = 0; p < constructed.size(); ++p) {
    const auto [n, small, dist] = constructed[p];
    std::vector<double> s;
    for (std::size_t i = 0; i < n; ++i)
      s.push_back(i < small ? 1e-6 * static_cast<double>(1 + 7 * i) : 0.2 + 0.3 * static_cast<double>(i));
    const DenseMatrix w1 = compose(random_orthogonal(n, 100 + p), s, random_orthogonal(n, 200 + p));
    DenseMatrix e = random_matrix(n, n, 300 + p);
    e = (dist / power_iteration_norm(e)) * e;
    const DenseMatrix w2 = w1 + e;
    const double tau = 1e-4;
    const FirstLayerOperator op1 = dense_operator(w1), op2 = dense_operator(w2);
    const InsensitiveSubspace sub = identify_subspace(op1, tau);
    RecodingConfig cfg;
    cfg.tau = tau;
    const DenseMatrix x = random_matrix(100, n, 400 + p);
    DenseMatrix recoded(100, n);
    for (std::size_t i = 0; i < 100; ++i) {
      const Recoded r = synthesize(x.row(i), sub, cfg, op1, derive_seed(500 + p, i));
      std::copy(r.recoded.begin(), r.recoded.end(), recoded.row(i).begin());
    }
    reports.push_back(verify_degradation(op1, op2, tau, recoded));
    names.push_back(fmt("constructed-%zu", n));
  }

  // Trained pairs: 16-channel patch convolutions give square per-patch
  // operators; tau sits at the third smallest singular value of the first.
  const Batch eval = run.data.subset(Split::eval);
  Batch head;
  head.inputs = DenseMatrix(100, eval.inputs.cols());
  for (std::size_t i = 0; i < 100; ++i) {
    std::copy(eval.inputs.row(i).begin(), eval.inputs.row(i).end(), head.inputs.row(i).begin());
    head.labels.push_back(eval.labels[i]);
  }
  ModelSpec spec;
  spec.family = Family::conv_front;
  spec.hidden = {};
  spec.conv.channels = 16;
  TrainOptions opts = run.config.models.training;
  opts.epochs = 10;
  for (std::uint64_t p = 0; p < 4; ++p) {
    const TrainedModel a = train(spec, run.data, derive_seed(run.config.seed, "accept/deg/a/" + std::to_string(p)), opts);
    const TrainedModel b = train(spec, run.data, derive_seed(run.config.seed, "accept/deg/b/" + std::to_string(p)), opts);
    const FirstLayerOperator oa = extract(a), ob = extract(b);
    const double tau = svd(oa.synthesis_operator()).right_spectrum[2];
    RecodingConfig cfg;
    cfg.tau = tau;
    cfg.seed = derive_seed(run.config.seed, "accept/deg/recode/" + std::to_string(p));
    const NEBatch ne = recode_batch(head, a, cfg);
    reports.push_back(verify_degradation(oa, ob, tau, ne.recoded));
    names.push_back("trained-conv16-" + std::to_string(p));
  }

  std::size_t checked = 0, violations = 0, vacuous = 0;
  double worst_ratio = 0.0, min_eps = INFINITY;
  for (const auto& r : reports) {
    if (r.vacuous || r.epsilon <= tol::kDegradationGapFloor) {
      ++vacuous;
      continue;
    }
    ++checked;
    violations += r.violations;
    worst_ratio = std::max(worst_ratio, r.max_ratio);
    min_eps = std::min(min_eps, r.epsilon);
  }
  std::size_t grid_vacuous = 0, grid_pairs = 0;
  for (const auto& p : grid.pairs)
    if (p.report) {
      ++grid_pairs;
      grid_vacuous += p.report->status() == BoundStatus::vacuous;
    }
  const double secs = seconds_since(t0);
  return {checked == 10 && violations == 0 && secs < tol::kDegradationSeconds,
          fmt("%zu pairs checked with eps > 1e-12 (min eps %.2e), %zu violations, max lhs/rhs %.3g; vacuous: %zu "
              "of the 10, %zu of %zu desk-grid pairs; %.1f s",
              checked, min_eps, violations, worst_ratio, vacuous, grid_vacuous, grid_pairs, secs)};
}

// ------------------------------------------------------------ end to end

Outcome model_specificity(const DeskRun& run) {
  const double ceiling = chance(run) + tol::kUnauthorizedMargin;
  std::size_t calib_bad = 0, auth_bad = 0, unauth_bad = 0, cells = 0;
  double worst_calib = 0.0, worst_drop = 0.0, worst_unauth = 0.0;
  for (const auto& t : run.models) {
    for (const auto& e : run.models) {
      const EvalRow* r = run.report.find(t.name, e.name);
      if (!r) {
        ++unauth_bad;
        continue;
      }
      ++cells;
      if (t.name == e.name) {
        const double dev = std::abs(r->psnr_db - tol::kTargetPsnr);
        worst_calib = std::max(worst_calib, dev);
        if (dev > tol::kCalibrationDb) ++calib_bad;
        const double drop = r->clean_acc - r->recoded_acc;
        worst_drop = std::max(worst_drop, drop);
        if (std::abs(drop) > tol::kAuthorizedDrop) ++auth_bad;
      } else {
        worst_unauth = std::max(worst_unauth, r->recoded_acc);
        if (r->recoded_acc > ceiling) ++unauth_bad;
      }
    }
  }
  return {calib_bad == 0 && auth_bad == 0 && unauth_bad == 0 && cells == run.models.size() * run.models.size() &&
              run.seconds < tol::kEndToEndSeconds,
          fmt("%zu cells; calibration max |dPSNR| %.3f dB (%zu off); authorized max drop %.1f pts (%zu off); "
              "unauthorized and transfer-match max accuracy %.1f%% vs ceiling %.1f%% (%zu over); grid run %.0f s",
              cells, worst_calib, calib_bad, 100 * worst_drop, auth_bad, 100 * worst_unauth, 100 * ceiling,
              unauth_bad, run.seconds)};
}

Outcome strength_sweep(const DeskRun& run) {
  const double ceiling = chance(run) + tol::kUnauthorizedMargin;
  const std::vector<double> levels{30, 25, 20, 15, 10};
  std::size_t missing = 0, auth_bad = 0, unauth_bad = 0;
  double worst_drop = 0.0, worst_unauth = 0.0;
  for (const auto& t : run.models) {
    for (double level : levels) {
      std::map<std::string, const EvalRow*> cells;
      for (const auto& r : run.report.rows)
        if (r.target_model == t.name && r.preprocess == "none" && r.attack == "none" &&
            std::abs(r.psnr_db - level) <= tol::kCalibrationDb && !cells.count(r.eval_model))
          cells[r.eval_model] = &r;
      if (cells.size() != run.models.size()) {
        ++missing;
        continue;
      }
      for (const auto& [name, r] : cells) {
        if (name == t.name) {
          const double drop = r->clean_acc - r->recoded_acc;
          worst_drop = std::max(worst_drop, drop);
          if (std::abs(drop) > tol::kSweepAuthorizedDrop) ++auth_bad;
        } else if (level <= 20.0) {
          worst_unauth = std::max(worst_unauth, r->recoded_acc);
          if (r->recoded_acc > ceiling) ++unauth_bad;
        }
      }
    }
  }
  return {missing == 0 && auth_bad == 0 && unauth_bad == 0,
          fmt("levels 30/25/20/15/10 dB; authorized max drop %.1f pts (%zu off); unauthorized at <= 20 dB max "
              "%.1f%% vs ceiling %.1f%% (%zu over); %zu missing groups",
              100 * worst_drop, auth_bad, 100 * worst_unauth, 100 * ceiling, unauth_bad, missing)};
}

Outcome preprocessing(const DeskRun& run) {
  const double ceiling = chance(run) + tol::kUnauthorizedMargin;
  std::map<std::string, double> worst_drop_by_op;
  std::size_t auth_bad = 0, unauth_bad = 0, groups = 0;
  double worst_unauth = 0.0;
  for (const auto& t : run.models) {
    const EvalRow* base = run.report.find(t.name, t.name);
    if (!base) continue;
    for (const auto& r : run.report.rows) {
      if (r.target_model != t.name || r.preprocess == "none" || r.attack != "none") continue;
      if (r.eval_model == t.name) {
        ++groups;
        const double drop = base->recoded_acc - r.recoded_acc;
        worst_drop_by_op[r.preprocess] = std::max(worst_drop_by_op[r.preprocess], drop);
        if (std::abs(drop) > tol::kPreprocessAuthorizedDrop) ++auth_bad;
      } else {
        worst_unauth = std::max(worst_unauth, r.recoded_acc);
        if (r.recoded_acc > ceiling) ++unauth_bad;
      }
    }
  }
  std::string per;
  for (const auto& [op, d] : worst_drop_by_op) per += fmt(" %s=%.1f", op.c_str(), 100 * d);
  return {groups == run.models.size() * run.config.harness.preprocess.size() && auth_bad == 0 && unauth_bad == 0,
          fmt("%zu groups; authorized max drop vs unpreprocessed NEs (pts):%s (%zu off); unauthorized max %.1f%% vs "
              "ceiling %.1f%% (%zu over)",
              groups, per.c_str(), auth_bad, 100 * worst_unauth, 100 * ceiling, unauth_bad)};
}

Outcome reconstruction(const DeskRun& run) {
  const double ceiling = chance(run) + tol::kUnauthorizedMargin;
  double control_min = INFINITY, ne_max = -INFINITY, worst_unauth = 0.0;
  std::size_t controls = 0, denoisers = 0, unauth_bad = 0;
  std::string oracle;
  for (const auto& a : run.report.attacks) {
    if (a.target_model == "gaussian") {
      ++controls;
      control_min = std::min(control_min, a.gain_db());
    } else if (a.attack.rfind("denoise-", 0) == 0) {
      ++denoisers;
      ne_max = std::max(ne_max, a.gain_db());
    } else if (a.attack == "projection-oracle") {
      const EvalRow* self = run.report.find(a.target_model, a.target_model, "none", a.attack);
      oracle += fmt(" %s=%.2fdB/%.1f%%", a.target_model.c_str(), a.gain_db(), self ? 100 * self->recoded_acc : NAN);
    }
  }
  for (const auto& r : run.report.rows)
    if (r.attack.rfind("denoise-", 0) == 0 && r.eval_model != r.target_model) {
      worst_unauth = std::max(worst_unauth, r.recoded_acc);
      if (r.recoded_acc > ceiling) ++unauth_bad;
    }
  const bool pass = controls == 2 && control_min >= tol::kControlGainDb && denoisers == 2 * run.models.size() &&
                    ne_max <= tol::kDenoiserGainDb && unauth_bad == 0;
  return {pass, fmt("control min gain %.2f dB (>= %.0f); NE denoiser max gain %.2f dB (<= %.0f) over %zu runs; "
                    "unauthorized after denoising max %.1f%% vs ceiling %.1f%% (%zu over); oracle projection "
                    "(gain/authorized accuracy):%s",
                    control_min, tol::kControlGainDb, ne_max, tol::kDenoiserGainDb, denoisers, 100 * worst_unauth,
                    100 * ceiling, unauth_bad, oracle.c_str())};
}

Outcome reproducibility(const DeskRun& first, const fs::path& work) {
  const fs::path echo = first.config.out / layout::kEval / layout::kConfigEcho;
  RunConfig again = load_config(echo);
  again.out = work / "rerun";
  fs::remove_all(again.out);
  const LabeledDataset data = build_dataset(again);
  const TrainResult trained = run_train(again, data);
  const EvalReport report = run_eval(again, data, trained.models);
  write_eval(again, data, trained.models, report);

  const Bytes a = read_file(first.config.out / layout::kEval / layout::kEvalCsv);
  const Bytes b = read_file(again.out / layout::kEval / layout::kEvalCsv);
  std::size_t same_models = 0;
  for (std::size_t i = 0; i < std::min(first.models.size(), trained.models.size()); ++i)
    same_models += first.models[i].model.checksum() == trained.models[i].model.checksum();
  const bool csv_equal = a == b;
  return {csv_equal && same_models == first.models.size() && trained.models.size() == first.models.size(),
          fmt("rerun from %s: eval.csv %s (%zu bytes), %zu of %zu model checksums equal", echo.string().c_str(),
              csv_equal ? "byte-identical" : "differs", a.size(), same_models, first.models.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::vector<std::string> expect_fail, only;
  std::string work = "acceptance-work";
  app.add_option("--expect-fail", expect_fail, "Criteria whose failure does not fail the run")->delimiter(',');
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--work", work, "Scratch directory for pipeline outputs")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const std::set<std::string> expected(expect_fail.begin(), expect_fail.end());
  const std::set<std::string> selected(only.begin(), only.end());
  auto wanted = [&](const std::string& id) { return selected.empty() || selected.count(id); };

  std::vector<std::pair<std::string, Outcome>> results;
  auto record = [&](const std::string& id, const Outcome& o) {
    results.emplace_back(id, o);
    std::printf("%s %s%s: %s\n", o.pass ? "PASS" : "FAIL", id.c_str(),
                !o.pass && expected.count(id) ? " [expected]" : "", o.detail.c_str());
    std::fflush(stdout);
  };
  auto guarded = [&](const std::string& id, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    try {
      record(id, fn());
    } catch (const std::exception& e) {
      record(id, {false, std::string("error: ") + e.what()});
    }
  };

  guarded("svd-oracle", svd_oracle);
  guarded("conv-linearization", conv_linearization);

  const std::set<std::string> needs_run{"retention-deterministic", "retention-probabilistic", "degradation-bound",
                                        "model-specificity", "strength-sweep", "preprocessing",
                                        "reconstruction", "reproducibility"};
  bool any = false;
  for (const auto& id : needs_run) any = any || wanted(id);
  if (any) {
    DeskRun run;
    std::optional<VerifyResult> verify;
    double verify_secs = 0.0;
    try {
      run.config.out = fs::path(work) / "desk";
      fs::remove_all(run.config.out);
      run.config.recoder.target_psnr_db = tol::kTargetPsnr;
      run.config.validate();
      const auto t0 = std::chrono::steady_clock::now();
      run.data = build_dataset(run.config);
      run.models = run_train(run.config, run.data).models;
      run.report = run_eval(run.config, run.data, run.models);
      write_eval(run.config, run.data, run.models, run.report);
      run.seconds = seconds_since(t0);
      const auto t1 = std::chrono::steady_clock::now();
      verify = run_verify(run.config, run.data, run.models);
      verify_secs = seconds_since(t1);
    } catch (const std::exception& e) {
      for (const auto& id : needs_run)
        if (wanted(id)) record(id, {false, std::string("desk run error: ") + e.what()});
      verify.reset();
      run.models.clear();
    }
    if (!run.models.empty()) {
      guarded("retention-deterministic", [&] { return retention_deterministic(run); });
      guarded("retention-probabilistic", [&] { return retention_probabilistic(*verify, verify_secs); });
      guarded("degradation-bound", [&] { return degradation_bound(run, *verify); });
      guarded("model-specificity", [&] { return model_specificity(run); });
      guarded("strength-sweep", [&] { return strength_sweep(run); });
      guarded("preprocessing", [&] { return preprocessing(run); });
      guarded("reconstruction", [&] { return reconstruction(run); });
      guarded("reproducibility", [&] { return reproducibility(run, work); });
    }
  }

  std::size_t passed = 0, failed = 0, unexpected = 0;
  for (const auto& [id, o] : results) {
    if (o.pass) {
      ++passed;
    } else {
      ++failed;
      if (!expected.count(id)) ++unexpected;
    }
  }
  std::printf("acceptance: %zu passed, %zu failed (%zu not in the expected-failure list)\n", passed, failed,
              unexpected);
  return unexpected == 0 ? 0 : 1;
}
