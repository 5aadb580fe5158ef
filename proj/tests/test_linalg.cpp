#include "doctest.h"

#include <cmath>

#include "necode/error.hpp"
#include "necode/linalg.hpp"
#include "oracles.hpp"

using namespace necode;
using necode::testing::random_matrix;

namespace {

void check_factors(const DenseMatrix& w, const SpectralFactors& f) {
  const double scale = std::max(1.0, w.frobenius_norm());
  CHECK(f.u.rows() == w.rows());
  CHECK(f.u.cols() == w.rows());
  CHECK(f.v.rows() == w.cols());
  CHECK(f.v.cols() == w.cols());
  CHECK(f.s.size() == std::min(w.rows(), w.cols()));
  CHECK(orthogonality_residual(f.u) <= 1e-8 * static_cast<double>(w.rows()));
  CHECK(orthogonality_residual(f.v) <= 1e-8 * static_cast<double>(w.cols()));
  CHECK((f.reconstruct() - w).frobenius_norm() <= 1e-8 * scale);
  for (std::size_t i = 0; i + 1 < f.s.size(); ++i) CHECK(f.s[i] <= f.s[i + 1]);
  for (double s : f.s) CHECK(s >= 0.0);
  for (std::size_t j = 0; j < f.v.cols(); ++j) {
    for (std::size_t i = 0; i < f.v.rows(); ++i) {
      if (std::abs(f.v(i, j)) > 1e-10) {
        CHECK(f.v(i, j) > 0.0);
        break;
      }
    }
  }
}

}  // namespace

TEST_SUITE("linalg") {

TEST_CASE("svd of identity") {
  const auto f = svd(DenseMatrix::identity(2));
  CHECK(f.s[0] == doctest::Approx(1.0));
  CHECK(f.s[1] == doctest::Approx(1.0));
  check_factors(DenseMatrix::identity(2), f);
  const DenseMatrix uvt = f.u * f.v.transpose();
  CHECK((uvt - DenseMatrix::identity(2)).frobenius_norm() < 1e-12);
}

TEST_CASE("svd of a diagonal matrix sorts ascending") {
  const DenseMatrix w{{4.0, 0.0}, {0.0, 3.0}};
  const auto f = svd(w);
  CHECK(f.s[0] == doctest::Approx(3.0));
  CHECK(f.s[1] == doctest::Approx(4.0));
  // Smallest value belongs to the second axis.
  CHECK(std::abs(f.v(1, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(f.v(0, 1)) == doctest::Approx(1.0));
  check_factors(w, f);
}

TEST_CASE("svd matches the Gram eigenvalue oracle") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t m = 1 + seed % 7;
    const std::size_t n = 1 + (seed * 3) % 9;
    const DenseMatrix w = seed == 1 ? random_matrix(3, 4, 42) : random_matrix(m, n, seed);
    const auto f = svd(w);
    const auto oracle = necode::testing::gram_singular_values(w);
    REQUIRE(oracle.size() == f.s.size());
    const double smax = oracle.back();
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(std::abs(f.s[i] - oracle[i]) <= 1e-8 * smax);
    check_factors(w, f);
  }
}

TEST_CASE("svd handles rank deficiency and zero matrices") {
  DenseMatrix w = random_matrix(5, 2, 3) * random_matrix(2, 6, 4);
  auto f = svd(w);
  check_factors(w, f);
  CHECK(f.s[0] < 1e-12);
  CHECK(f.s[2] < 1e-12);

  const DenseMatrix zero(3, 4, 0.0);
  f = svd(zero);
  check_factors(zero, f);
  for (double s : f.s) CHECK(s == 0.0);
}

TEST_CASE("svd rejects non-finite input") {
  DenseMatrix w(2, 2, 1.0);
  w(0, 1) = std::nan("");
  CHECK_THROWS_AS(svd(w), NumericalError);
}

TEST_CASE("right spectrum pairs every column of V") {
  const DenseMatrix w = random_matrix(3, 7, 11);
  const auto f = svd(w);
  REQUIRE(f.right_spectrum.size() == 7);
  for (std::size_t j = 0; j < 7; ++j) {
    const Vector wv = w * f.v.column(j);
    CHECK(norm2(wv) == doctest::Approx(f.right_spectrum[j]).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("eig_sym on identity and rank one") {
  auto e = eig_sym(DenseMatrix::identity(4));
  for (double v : e.eigvals) CHECK(v == doctest::Approx(1.0));
  CHECK(orthogonality_residual(e.eigvecs) < 1e-12);

  Vector v{1.0, 2.0, 2.0};
  for (double& x : v) x /= 3.0;
  DenseMatrix outer(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) outer(i, j) = v[i] * v[j];
  e = eig_sym(outer);
  CHECK(std::abs(e.eigvals[0]) < 1e-12);
  CHECK(std::abs(e.eigvals[1]) < 1e-12);
  CHECK(e.eigvals[2] == doctest::Approx(1.0));
  const Vector top = e.eigvecs.column(2);
  CHECK(std::abs(dot(top, v)) == doctest::Approx(1.0));
}

TEST_CASE("eig_sym matches the characteristic cubic on random PSD matrices") {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const DenseMatrix g = random_matrix(3, 5, seed);
    const DenseMatrix c = g * g.transpose();
    const auto e = eig_sym(c);
    const auto roots = necode::testing::cubic_eigenvalues(c);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(e.eigvals[i] - roots[i]) <= 1e-8 * roots[2]);
    const DenseMatrix back = e.eigvecs * DenseMatrix::diagonal(e.eigvals) * e.eigvecs.transpose();
    CHECK((back - c).frobenius_norm() <= 1e-8 * c.frobenius_norm());
  }
}

TEST_CASE("eig_sym rejects asymmetric input") {
  const DenseMatrix c{{1.0, 2.0}, {0.0, 1.0}};
  CHECK_THROWS_AS(eig_sym(c), InvalidArgument);
  CHECK_THROWS_AS(eig_sym(DenseMatrix(2, 3)), InvalidArgument);
}

TEST_CASE("pca edge cases") {
  DenseMatrix same(4, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    same(i, 0) = 0.5;
    same(i, 1) = -1.0;
    same(i, 2) = 2.0;
  }
  auto p = pca(same);
  CHECK(p.centered);
  CHECK(p.covariance.frobenius_norm() == 0.0);
  for (double v : p.eigvals) CHECK(v == 0.0);

  const Vector v{0.6, 0.8};
  const DenseMatrix pair{{v[0], v[1]}, {-v[0], -v[1]}};
  p = pca(pair);
  CHECK(std::abs(dot(p.eigvecs.column(1), v)) == doctest::Approx(1.0));

  CHECK_THROWS_AS(pca(DenseMatrix(1, 3)), InvalidArgument);
}

TEST_CASE("pca recovers the stretched axis of a Gaussian cloud") {
  const std::size_t n = 6;
  Vector axis(n);
  for (std::size_t i = 0; i < n; ++i) axis[i] = 1.0 + static_cast<double>(i);
  const double an = norm2(axis);
  for (double& x : axis) x /= an;

  const DenseMatrix noise = random_matrix(2000, n, 5, 0.3);
  const DenseMatrix scale = random_matrix(2000, 1, 6, 3.0);
  DenseMatrix cloud = noise;
  for (std::size_t i = 0; i < cloud.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) cloud(i, j) += scale(i, 0) * axis[j] + 5.0;
  const auto p = pca(cloud);
  CHECK(std::abs(dot(p.eigvecs.column(n - 1), axis)) >= 0.99);
  for (double ev : p.eigvals) CHECK(ev >= -1e-10);

  const auto raw = pca(cloud, false);
  CHECK_FALSE(raw.centered);
  CHECK(raw.eigvals.back() > p.eigvals.back());
}

TEST_CASE("nullspace") {
  const DenseMatrix square{{2.0, 1.0}, {1.0, 3.0}};
  CHECK(nullspace(square, 1e-12).empty());

  const DenseMatrix row{{1.0, 0.0}};
  auto ns = nullspace(row, 1e-12);
  REQUIRE(ns.size() == 1);
  CHECK(std::abs(ns[0][0]) < 1e-12);
  CHECK(std::abs(ns[0][1]) == doctest::Approx(1.0));

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t m = 2 + seed % 5;
    const std::size_t n = m + 1 + seed % 7;
    const DenseMatrix w = random_matrix(m, n, seed);
    const double wn = spectral_norm(w);
    ns = nullspace(w, 1e-10 * wn);
    CHECK(ns.size() >= n - m);
    for (const auto& v : ns) CHECK(norm2(w * v) <= 1e-10 * wn);
  }
  CHECK_THROWS_AS(nullspace(row, -1.0), InvalidArgument);
}

TEST_CASE("nullspace lies inside every looser threshold set") {
  const DenseMatrix w = random_matrix(4, 9, 77);
  const auto f = svd(w);
  const auto ns = nullspace(w, 1e-12);
  for (double tau : {1e-12, 1e-6, 0.5}) {
    std::vector<Vector> ins;
    for (std::size_t j = 0; j < f.right_spectrum.size(); ++j)
      if (f.right_spectrum[j] <= tau) ins.push_back(f.v.column(j));
    for (const auto& v : ns) {
      double captured = 0.0;
      for (const auto& u : ins) captured += dot(u, v) * dot(u, v);
      CHECK(captured == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("spectral norm") {
  CHECK(spectral_norm(DenseMatrix::identity(5)) == doctest::Approx(1.0));
  CHECK(spectral_norm(DenseMatrix{{0.5, 0.0}, {0.0, 2.0}}) == doctest::Approx(2.0));
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const DenseMatrix w = random_matrix(6 + seed, 4 + 2 * seed, seed);
    const double oracle = necode::testing::power_iteration_norm(w);
    CHECK(std::abs(spectral_norm(w) - oracle) <= 1e-7 * oracle);
    CHECK(spectral_norm(w) == svd(w).s.back());
  }
}

TEST_CASE("principal angles") {
  const DenseMatrix q = necode::testing::random_orthogonal(6, 9);
  const DenseMatrix a = q.columns(0, 3);
  for (double c : principal_angles(a, a)) CHECK(c == doctest::Approx(1.0));
  for (double c : principal_angles(a, q.columns(3, 3))) CHECK(c < 1e-12);

  for (double theta : {0.0, 0.3, 1.0, 1.5, 2.5}) {
    const DenseMatrix e1{{1.0}, {0.0}};
    const DenseMatrix rotated{{std::cos(theta)}, {std::sin(theta)}};
    const auto c = principal_angles(e1, rotated);
    REQUIRE(c.size() == 1);
    CHECK(std::abs(c[0] - std::abs(std::cos(theta))) <= 1e-10);
  }
  CHECK_THROWS_AS(principal_angles(DenseMatrix(3, 1, 1.0), DenseMatrix(4, 1, 1.0)), InvalidArgument);
}

TEST_CASE("orthonormal complement completes a basis") {
  const DenseMatrix q = necode::testing::random_orthogonal(7, 2).columns(0, 3);
  const DenseMatrix comp = orthonormal_complement(q);
  REQUIRE(comp.cols() == 4);
  CHECK(orthogonality_residual(comp) < 1e-12);
  CHECK(transpose_multiply(q, comp).frobenius_norm() < 1e-12);
}

TEST_CASE("random factorizations satisfy the invariants") {
  for (std::uint64_t seed = 500; seed < 540; ++seed) {
    const std::size_t m = 1 + seed % 13;
    const std::size_t n = 1 + (seed / 3) % 17;
    const double scale = std::pow(10.0, static_cast<double>(seed % 7) - 3.0);
    const DenseMatrix w = random_matrix(m, n, seed, scale);
    check_factors(w, svd(w));
  }
}

}  // TEST_SUITE
