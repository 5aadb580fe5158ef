#include "doctest.h"

#include <cmath>

#include <Eigen/SVD>

#include "json.hpp"
#include "necode/bounds.hpp"
#include "necode/error.hpp"
#include "necode/random.hpp"
#include "oracles.hpp"

using namespace necode;
using namespace necode::testing;

namespace {

FirstLayerOperator dense_operator(const DenseMatrix& w) {
  FirstLayerOperator op;
  op.weight = w;
  op.lift = LiftKind::identity;
  op.layout = {1, 1, w.cols()};
  op.bias = DenseMatrix(w.rows(), 1);
  return op;
}

// P(χ²_{2m} ≥ x) via the Poisson sum for even degrees of freedom.
double chi_square_tail_even(std::size_t dof, double x) {
  const double h = x / 2.0;
  double term = std::exp(-h), total = 0.0;
  for (std::size_t i = 0; i < dof / 2; ++i) {
    total += term;
    term *= h / static_cast<double>(i + 1);
  }
  return total;
}

// ε recomputed from Eigen's singular values, padded with zeros to n.
double eigen_gap(const DenseMatrix& w1, const DenseMatrix& w2, double tau) {
  auto spectrum = [](const DenseMatrix& w) {
    Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(to_eigen(w)).singularValues();
    std::vector<double> v(s.data(), s.data() + s.size());
    v.resize(w.cols(), 0.0);
    return v;
  };
  const auto a = spectrum(w1), b = spectrum(w2);
  double eps = INFINITY;
  for (double x : a)
    if (x <= tau)
      for (double y : b) eps = std::min(eps, std::abs(x - y));
  return eps;
}

TrainedModel trained_conv(std::uint64_t seed, const LabeledDataset& data, std::size_t channels = 8) {
  ModelSpec s;
  s.family = Family::conv_front;
  s.hidden = {};
  s.conv.channels = channels;
  return train(s, data, seed, {10, 0.05, 0.9, 32});
}

}  // namespace

TEST_SUITE("bounds") {

TEST_CASE("retention with zero sigma never violates") {
  const auto op = dense_operator(random_matrix(2, 12, 1));
  const auto r = verify_retention(op, 1e-4, 0.0, 0.05, 500, 3);
  CHECK(r.k == 10);
  CHECK(r.max_observed_norm == 0.0);
  CHECK(r.empirical_violation_rate == 0.0);
  CHECK(r.deterministic_violations == 0);
  CHECK(r.status() == BoundStatus::pass);
}

TEST_CASE("retention at k=10, sigma=0.1, t=0.05") {
  const auto op = dense_operator(random_matrix(2, 12, 2));
  const auto r = verify_retention(op, 1e-4, 0.1, 0.05, 10000, 4);
  CHECK(r.k == 10);
  CHECK(r.ceiling() == doctest::Approx(0.8));
  CHECK(r.bound == doctest::Approx(1e-4 * std::sqrt(0.1 + 0.05)));
  CHECK(r.deterministic_violations == 0);
  CHECK(r.status() == BoundStatus::pass);
  CHECK(r.tail_rate <= 0.8);
  // The ‖z‖² tail against the exact chi-square tail.
  const double exact = chi_square_tail_even(10, (0.1 + 0.05) / 0.01);
  const double se = std::sqrt(exact * (1.0 - exact) / 10000.0);
  CHECK(std::abs(r.tail_rate - exact) <= 4.0 * se);
  CHECK(r.empirical_violation_rate <= r.tail_rate);
}

TEST_CASE("vacuous grid points are flagged") {
  const auto op = dense_operator(random_matrix(2, 12, 5));
  const auto r = verify_retention(op, 1e-4, 1.0, 0.5, 200, 6);
  CHECK(r.prob_floor < 0.0);
  CHECK(r.status() == BoundStatus::vacuous);
  CHECK_THROWS_AS(verify_retention(op, 1e-4, 1.0, 0.0, 10, 1), InvalidArgument);
  CHECK_THROWS_AS(verify_retention(op, 1e-4, 1.0, 1.0, 0, 1), InvalidArgument);
  CHECK_THROWS_AS(verify_retention(dense_operator(DenseMatrix::identity(4)), 1e-4, 1.0, 1.0, 10, 1),
                  SubspaceError);
}

TEST_CASE("retention is deterministic for a fixed seed") {
  const auto op = dense_operator(random_matrix(3, 20, 7));
  const auto s = leading_directions(identify_subspace(op, 1e-4), 5);
  CHECK(s.rank() == 5);
  const auto a = verify_retention(op, s, 0.2, 0.1, 300, 9);
  const auto b = verify_retention(op, s, 0.2, 0.1, 300, 9);
  CHECK(to_json(a) == to_json(b));
  CHECK(a.k == 5);
  CHECK_THROWS_AS(leading_directions(s, 6), InvalidArgument);
}

TEST_CASE("retention on patch operators counts every coefficient") {
  const auto data = make_dataset("mini-digits", 1, {1, 1, 1});
  ModelSpec spec;
  spec.family = Family::conv_front;
  spec.hidden = {};
  const auto op = extract(init_model(spec, 2));
  const auto s = identify_subspace(op, 1e-4);
  const auto r = verify_retention(op, s, 0.01, 1e-3, 200, 1);
  CHECK(r.k == s.rank() * op.positions());
  CHECK(r.deterministic_violations == 0);
}

TEST_CASE("identical operators give zero deviation") {
  const DenseMatrix w = compose(random_orthogonal(6, 1), {1e-6, 3e-5, 0.2, 0.5, 1.0, 2.0}, random_orthogonal(6, 2));
  const DenseMatrix x = random_matrix(6, 10, 3);
  const auto r = verify_degradation(w, w, 1e-4, x);
  CHECK_FALSE(r.vacuous);
  CHECK(r.status() == BoundStatus::pass);
  CHECK(r.spectral_distance == 0.0);
  REQUIRE(r.records.size() == 2 * 10);
  for (const auto& rec : r.records) CHECK(rec.lhs == 0.0);

  // A perturbation of one entry makes the spectra collide only approximately.
  DenseMatrix w2 = w;
  w2(0, 0) += 1e-15;
  const auto near = verify_degradation(w, w2, 1e-4, x);
  CHECK((near.vacuous || near.violations == 0));

  const auto op = dense_operator(w);
  for (std::size_t i = 0; i < 6; ++i) {
    const Vector v = svd(w).v.column(i);
    const DenseMatrix d(1, 6, v);
    CHECK(cross_model_ratios(op, op, d)[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("constructed pair with controlled spectral distance") {
  const DenseMatrix w1 =
      compose(random_orthogonal(8, 4), {2e-6, 4e-5, 0.1, 0.3, 0.6, 1.0, 1.5, 2.0}, random_orthogonal(8, 5));
  DenseMatrix e = random_matrix(8, 8, 6);
  e = (1e-6 / power_iteration_norm(e)) * e;
  const DenseMatrix w2 = w1 + e;
  const DenseMatrix x = random_matrix(8, 100, 7);
  const double tau = 1e-4;
  const auto r = verify_degradation(w1, w2, tau, x);
  CHECK_FALSE(r.vacuous);
  CHECK(r.qualifying == 2);
  CHECK(r.records.size() == 200);
  CHECK(r.spectral_distance == doctest::Approx(1e-6).epsilon(1e-6));
  CHECK(r.epsilon == doctest::Approx(eigen_gap(w1, w2, tau)).epsilon(1e-6));
  CHECK(r.violations == 0);
  for (const auto& rec : r.records) {
    const auto col = x.column(rec.sample);
    CHECK(rec.rhs == doctest::Approx(norm2(col) * (tau * r.spectral_distance / r.epsilon + r.epsilon)));
  }
  CHECK(r.status() == BoundStatus::pass);
  const auto parsed = nlohmann::json::parse(to_json(r, true));
  CHECK(parsed["records"].size() == 200);
  CHECK(parsed["status"] == "PASS");
}

TEST_CASE("wide operators collide in the exact nullspace") {
  const DenseMatrix w1 = random_matrix(3, 8, 1);
  const DenseMatrix w2 = random_matrix(3, 8, 2);
  const auto r = verify_degradation(w1, w2, 1e-4, random_matrix(8, 4, 3));
  CHECK(r.vacuous);
  CHECK(r.records.empty());
  CHECK_THROWS_AS(verify_degradation(w1, random_matrix(3, 7, 2), 1e-4, random_matrix(8, 4, 3)),
                  InvalidArgument);
}

TEST_CASE("independently trained conv fronts disagree on the insensitive subspace") {
  const auto data = make_dataset("mini-digits", 11, {100, 600, 100});
  const auto a = extract(trained_conv(1, data));
  const auto b = extract(trained_conv(2, data));
  const auto s = identify_subspace(a, 1e-4);
  RecodingConfig cfg;
  cfg.lambda = 1.0;
  const auto eval = data.subset(Split::eval);
  DenseMatrix deltas(eval.size(), 256);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto r = synthesize(eval.inputs.row(i), s, cfg, a, derive_seed(3, i));
    std::copy(r.perturbation.delta.begin(), r.perturbation.delta.end(), deltas.row(i).begin());
  }
  CHECK(median(cross_model_ratios(a, b, deltas)) >= 10.0);

  // Square per-patch operators so the spectra have a non-zero gap.
  const auto sa = extract(trained_conv(3, data, 16));
  const auto sb = extract(trained_conv(4, data, 16));
  const Vector spectrum = svd(sa.synthesis_operator()).right_spectrum;
  const double tau = spectrum[2];
  DenseMatrix recoded(4, 256);
  for (std::size_t i = 0; i < 4; ++i) std::copy(eval.inputs.row(i).begin(), eval.inputs.row(i).end(), recoded.row(i).begin());
  const auto r = verify_degradation(sa, sb, tau, recoded);
  CHECK(r.qualifying == 3);
  CHECK(r.samples == 4 * sa.positions());
  CHECK_FALSE(r.vacuous);
  CHECK(r.violations == 0);
}

TEST_CASE("flatness energy accounting") {
  for (std::size_t n : {10u, 40u, 64u}) {
    const Vector flat(n, 1.0);
    const auto r = flatness(flat);
    CHECK(r.p95_count == static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))));
    CHECK(r.max == r.min);
  }
  const auto rank1 = flatness(svd(random_matrix(6, 1, 2) * random_matrix(1, 9, 3)).s);
  CHECK(rank1.p95_count == 1);
  CHECK(rank1.p99_count == 1);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Vector s(1 + rng.below(30));
    for (double& v : s) v = std::exp(3.0 * rng.normal());
    for (EnergyMode m : {EnergyMode::sum, EnergyMode::squared}) {
      const auto r = flatness(s, m);
      CHECK(r.p95_count <= r.p99_count);
      CHECK(r.p99_count <= s.size());
      CHECK(std::is_sorted(r.spectrum.begin(), r.spectrum.end()));
    }
    CHECK(flatness(s, EnergyMode::squared).p95_count <= flatness(s, EnergyMode::sum).p95_count);
  }
  const Vector known{1.0, 2.0, 3.0, 4.0};  // 4+3+2 = 9 of 10 ⇒ 95% needs all four
  CHECK(flatness(known).p95_count == 4);
  CHECK(flatness(known).median == 2.5);
  CHECK(flatness(known, EnergyMode::squared).p95_count == 3);  // 16+9+4 = 29 of 30
  CHECK_THROWS_AS(flatness(Vector{}), InvalidArgument);
}

TEST_CASE("trained conv front has a decaying spectrum") {
  const auto data = make_dataset("mini-digits", 12, {100, 600, 100});
  const auto op = extract(trained_conv(5, data, 16));
  const auto r = flatness(op);
  CHECK(r.spectrum.size() == 16);
  CHECK(r.p99_count < 16);
  const auto digits = flatness(data.subset(Split::train).inputs);
  CHECK(digits.p95_count < 256);
  const auto parsed = nlohmann::json::parse(to_json(r));
  CHECK(parsed["p99_count"] == r.p99_count);
}

TEST_CASE("alignment") {
  const DenseMatrix samples = random_matrix(200, 6, 8);
  const auto c = pca(samples);
  // Operator whose right-singular vectors are the principal directions.
  DenseMatrix w(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) w(i, j) = (1.0 + static_cast<double>(i)) * c.eigvecs(j, i);
  const auto same = alignment(w, samples, 3);
  for (double cos : same.cosines) CHECK(cos == doctest::Approx(1.0).epsilon(1e-8));
  CHECK_THROWS_AS(alignment(w, samples, 7), InvalidArgument);

  const auto random = alignment(random_matrix(6, 6, 9), samples, 2);
  CHECK(random.mean_cosine >= 0.0);
  CHECK(random.mean_cosine <= 1.0);
}

TEST_CASE("linear model on two blobs aligns with the leading component") {
  const auto data = make_dataset("gaussian-blobs", 3, {50, 500, 100});
  ModelSpec spec;
  spec.family = Family::dense_front;
  spec.input = {1, 1, 64};
  spec.classes = 2;
  spec.hidden = {};
  const auto model = train(spec, data, 4, {20, 0.05, 0.9, 32});
  const auto r = alignment(extract(model), data.subset(Split::train).inputs, 1);
  CHECK(r.cosines.at(0) >= 0.9);
}

TEST_CASE("retention CSV") {
  const auto op = dense_operator(random_matrix(2, 12, 2));
  std::vector<RetentionBoundReport> rows{verify_retention(op, 1e-4, 0.1, 0.05, 100, 1),
                                         verify_retention(op, 1e-4, 1.0, 0.05, 100, 1)};
  const std::string csv = retention_csv(rows);
  CHECK(csv.rfind("k,sigma,t,tau,bound,ceiling,trials,violation_rate,tail_rate,max_norm,"
                  "deterministic_violations,status\n",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.find("VACUOUS") != std::string::npos);
  CHECK(retention_csv({}).find('\n') == csv.find('\n'));
  const std::vector<std::string> names{"a", "b"};
  const std::string labeled = retention_csv(rows, names);
  CHECK(labeled.rfind("model,k,", 0) == 0);
  CHECK(labeled.find("\nb,") != std::string::npos);
  CHECK_THROWS_AS(retention_csv(rows, std::vector<std::string>{"a"}), InvalidArgument);
}

}  // TEST_SUITE
