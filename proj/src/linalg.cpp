#include "necode/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "necode/error.hpp"

namespace necode {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Threshold used for the sign convention: the first component whose
// magnitude exceeds this is made non-negative.
constexpr double kSignThreshold = 1e-10;

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

// Flips `col` (length len, given stride) so its first non-negligible entry is
// non-negative. Returns true when a flip happened.
bool canonical_sign(double* col, std::size_t len, std::size_t stride) {
  for (std::size_t i = 0; i < len; ++i) {
    const double x = col[i * stride];
    if (std::abs(x) > kSignThreshold) {
      if (x < 0) {
        for (std::size_t k = 0; k < len; ++k) col[k * stride] = -col[k * stride];
        return true;
      }
      return false;
    }
  }
  return false;
}

// Order indices so that values ascend; ties keep index order.
std::vector<std::size_t> ascending_order(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  return order;
}

}  // namespace

// ---------------------------------------------------------------------------
// DenseMatrix

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
  require(data_.size() == rows_ * cols_, "DenseMatrix: entry count does not match shape");
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require(r.size() == cols_, "DenseMatrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> values) {
  DenseMatrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

DenseMatrix DenseMatrix::from_columns(std::span<const Vector> columns) {
  require(!columns.empty(), "from_columns: no columns");
  const std::size_t rows = columns.front().size();
  DenseMatrix m(rows, columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) m.set_column(j, columns[j]);
  return m;
}

Vector DenseMatrix::column(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void DenseMatrix::set_column(std::size_t c, std::span<const double> values) {
  require(values.size() == rows_, "set_column: length mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

DenseMatrix DenseMatrix::columns(std::size_t first, std::size_t count) const {
  require(first + count <= cols_, "columns: range out of bounds");
  DenseMatrix out(rows_, count);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = (*this)(r, first + c);
  return out;
}

double DenseMatrix::frobenius_norm() const { return norm2(data_); }

bool DenseMatrix::is_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), "matrix product: inner dimensions differ");
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Vector operator*(const DenseMatrix& a, std::span<const double> x) {
  require(a.cols() == x.size(), "matrix-vector product: length mismatch");
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = dot(a.row(i), x);
  return out;
}

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix sum: shape mismatch");
  DenseMatrix out = a;
  auto d = out.data();
  auto e = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += e[i];
  return out;
}

DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix difference: shape mismatch");
  DenseMatrix out = a;
  auto d = out.data();
  auto e = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= e[i];
  return out;
}

DenseMatrix operator*(double s, const DenseMatrix& a) {
  DenseMatrix out = a;
  for (double& x : out.data()) x *= s;
  return out;
}

DenseMatrix transpose_multiply(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows(), "transpose_multiply: row counts differ");
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto a_row = a.row(k);
    const auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

Vector transpose_multiply(const DenseMatrix& a, std::span<const double> x) {
  require(a.rows() == x.size(), "transpose_multiply: length mismatch");
  Vector out(a.cols(), 0.0);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double xk = x[k];
    const auto a_row = a.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) out[i] += a_row[i] * xk;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) {
  // Scaled accumulation keeps tiny and huge vectors from under/overflowing.
  double scale = 0.0;
  double ssq = 1.0;
  for (double x : a) {
    if (x == 0.0) continue;
    const double ax = std::abs(x);
    if (scale < ax) {
      ssq = 1.0 + ssq * (scale / ax) * (scale / ax);
      scale = ax;
    } else {
      ssq += (ax / scale) * (ax / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

// ---------------------------------------------------------------------------
// Orthogonal completion

DenseMatrix orthonormal_complement(const DenseMatrix& q) {
  const std::size_t m = q.rows();
  const std::size_t a = q.cols();
  require(a <= m, "orthonormal_complement: more columns than rows");
  // Householder QR of q, kept column-major; reflector k lives in rows k..m-1.
  std::vector<Vector> refl;
  refl.reserve(a);
  std::vector<Vector> cols(a);
  for (std::size_t j = 0; j < a; ++j) cols[j] = q.column(j);

  for (std::size_t k = 0; k < a; ++k) {
    Vector& x = cols[k];
    double alpha = 0.0;
    for (std::size_t i = k; i < m; ++i) alpha += x[i] * x[i];
    alpha = std::sqrt(alpha);
    Vector v(m, 0.0);
    for (std::size_t i = k; i < m; ++i) v[i] = x[i];
    v[k] += (x[k] >= 0 ? alpha : -alpha);
    double vv = 0.0;
    for (std::size_t i = k; i < m; ++i) vv += v[i] * v[i];
    if (vv > 0.0) {
      for (std::size_t j = k; j < a; ++j) {
        double d = 0.0;
        for (std::size_t i = k; i < m; ++i) d += v[i] * cols[j][i];
        const double f = 2.0 * d / vv;
        for (std::size_t i = k; i < m; ++i) cols[j][i] -= f * v[i];
      }
    }
    refl.push_back(std::move(v));
  }

  DenseMatrix out(m, m - a);
  Vector e(m);
  for (std::size_t j = a; j < m; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    for (std::size_t kk = a; kk-- > 0;) {
      const Vector& v = refl[kk];
      double vv = 0.0;
      double d = 0.0;
      for (std::size_t i = kk; i < m; ++i) {
        vv += v[i] * v[i];
        d += v[i] * e[i];
      }
      if (vv == 0.0) continue;
      const double f = 2.0 * d / vv;
      for (std::size_t i = kk; i < m; ++i) e[i] -= f * v[i];
    }
    out.set_column(j - a, e);
  }
  return out;
}

double orthogonality_residual(const DenseMatrix& a) {
  DenseMatrix g = transpose_multiply(a, a);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return g.frobenius_norm();
}

// ---------------------------------------------------------------------------
// SVD

DenseMatrix SpectralFactors::reconstruct() const {
  const std::size_t mm = m();
  const std::size_t nn = n();
  const std::size_t r = s.size();
  DenseMatrix w(mm, nn);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t uc = mm - r + i;
    const std::size_t vc = nn - r + i;
    for (std::size_t p = 0; p < mm; ++p) {
      const double us = u(p, uc) * s[i];
      if (us == 0.0) continue;
      auto row = w.row(p);
      for (std::size_t q = 0; q < nn; ++q) row[q] += us * v(q, vc);
    }
  }
  return w;
}

SpectralFactors svd(const DenseMatrix& w) {
  require(w.rows() >= 1 && w.cols() >= 1, "svd: empty matrix");
  if (!w.is_finite()) throw NumericalError("svd: matrix contains non-finite entries");

  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const std::size_t r = std::min(m, n);

  // Column-major working copies: g holds W·V, vk accumulates V.
  std::vector<double> g(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) g[j * m + i] = w(i, j);
  std::vector<double> vk(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) vk[j * n + j] = 1.0;

  const double fnorm = w.frobenius_norm();
  const double tol = kEps * static_cast<double>(std::max<std::size_t>(m, 8));
  const double floor2 = (kEps * fnorm) * (kEps * fnorm) * 1e-2;

  constexpr int kMaxSweeps = 80;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      double* gp = &g[p * m];
      for (std::size_t q = p + 1; q < n; ++q) {
        double* gq = &g[q * m];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += gp[i] * gp[i];
          beta += gq[i] * gq[i];
          gamma += gp[i] * gq[i];
        }
        if (alpha <= floor2 || beta <= floor2) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double a = gp[i];
          const double b = gq[i];
          gp[i] = c * a - s * b;
          gq[i] = s * a + c * b;
        }
        double* vp = &vk[p * n];
        double* vq = &vk[q * n];
        for (std::size_t i = 0; i < n; ++i) {
          const double a = vp[i];
          const double b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
    if (!rotated) break;
  }

  Vector norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = norm2({&g[j * m], m});
  const auto order = ascending_order(norms);

  SpectralFactors f;
  f.v = DenseMatrix(n, n);
  f.right_spectrum.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    double* vcol = &vk[j * n];
    if (canonical_sign(vcol, n, 1)) {
      for (std::size_t i = 0; i < m; ++i) g[j * m + i] = -g[j * m + i];
    }
    for (std::size_t i = 0; i < n; ++i) f.v(i, k) = vcol[i];
    f.right_spectrum[k] = norms[j];
  }
  f.s.assign(f.right_spectrum.end() - static_cast<std::ptrdiff_t>(r), f.right_spectrum.end());

  // Left vectors: normalise W·v for well-determined directions, largest first,
  // with two Gram-Schmidt passes; complete the rest orthogonally.
  const double smax = f.s.back();
  const double trust = smax * kEps * static_cast<double>(std::max(m, n));
  f.u = DenseMatrix(m, m);
  std::vector<Vector> accepted;
  std::vector<std::size_t> accepted_slot;
  std::vector<bool> filled(m, false);
  for (std::size_t i = r; i-- > 0;) {
    const std::size_t k = n - r + i;  // sorted column index
    const double sv = f.right_spectrum[k];
    if (sv <= trust || smax == 0.0) continue;
    Vector u(&g[order[k] * m], &g[order[k] * m] + m);
    for (int pass = 0; pass < 2; ++pass) {
      for (const Vector& prev : accepted) {
        const double d = dot(prev, u);
        for (std::size_t p = 0; p < m; ++p) u[p] -= d * prev[p];
      }
    }
    const double rn = norm2(u);
    if (rn <= 0.5 * sv) continue;
    for (double& x : u) x /= rn;
    const std::size_t slot = m - r + i;
    f.u.set_column(slot, u);
    filled[slot] = true;
    accepted.push_back(std::move(u));
    accepted_slot.push_back(slot);
  }
  if (accepted.size() < m) {
    DenseMatrix basis(m, accepted.size());
    for (std::size_t j = 0; j < accepted.size(); ++j) basis.set_column(j, accepted[j]);
    const DenseMatrix comp = orthonormal_complement(basis);
    std::size_t next = 0;
    for (std::size_t slot = 0; slot < m; ++slot) {
      if (filled[slot]) continue;
      f.u.set_column(slot, comp.column(next++));
    }
  }
  return f;
}

double spectral_norm(const DenseMatrix& w) { return svd(w).s.back(); }

std::vector<Vector> nullspace(const DenseMatrix& w, double tol) {
  require(tol >= 0.0, "nullspace: tolerance must be non-negative");
  const SpectralFactors f = svd(w);
  std::vector<Vector> basis;
  for (std::size_t j = 0; j < f.right_spectrum.size(); ++j) {
    if (f.right_spectrum[j] <= tol) basis.push_back(f.v.column(j));
  }
  return basis;
}

Vector principal_angles(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows(), "principal_angles: row counts differ");
  require(a.cols() >= 1 && b.cols() >= 1, "principal_angles: empty basis");
  const SpectralFactors f = svd(transpose_multiply(a, b));
  Vector cosines(f.s.rbegin(), f.s.rend());
  for (double& c : cosines) c = std::clamp(c, 0.0, 1.0);
  return cosines;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition

CovarianceSpectrum eig_sym(const DenseMatrix& c) {
  require(c.rows() == c.cols() && c.rows() >= 1, "eig_sym: matrix must be square");
  if (!c.is_finite()) throw NumericalError("eig_sym: matrix contains non-finite entries");
  const std::size_t n = c.rows();
  const double cnorm = c.frobenius_norm();
  {
    double asym = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) asym += 2.0 * (c(i, j) - c(j, i)) * (c(i, j) - c(j, i));
    if (std::sqrt(asym) > 1e-10 * cnorm) throw InvalidArgument("eig_sym: matrix is not symmetric");
  }

  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (c(i, j) + c(j, i));
  DenseMatrix v = DenseMatrix::identity(n);

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(off) <= kEps * 1e-2 * cnorm || off == 0.0) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= kEps * 1e-3 * (std::abs(a(p, p)) + std::abs(a(q, q))) ||
            apq == 0.0) {
          a(p, q) = 0.0;
          a(q, p) = 0.0;
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t =
            (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::hypot(1.0, theta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * cs;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = cs * akp - sn * akq;
          a(k, q) = sn * akp + cs * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = cs * apk - sn * aqk;
          a(q, k) = sn * apk + cs * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = cs * vkp - sn * vkq;
          v(k, q) = sn * vkp + cs * vkq;
        }
      }
    }
  }

  Vector diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  const auto order = ascending_order(diag);

  CovarianceSpectrum out;
  out.covariance = c;
  out.eigvals.resize(n);
  out.eigvecs = DenseMatrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    Vector col = v.column(order[k]);
    canonical_sign(col.data(), n, 1);
    out.eigvecs.set_column(k, col);
    out.eigvals[k] = diag[order[k]];
  }
  return out;
}

CovarianceSpectrum pca(const DenseMatrix& samples, bool centered) {
  require(samples.rows() >= 2, "pca: need at least two samples");
  const std::size_t n_samples = samples.rows();
  const std::size_t dim = samples.cols();
  Vector mean(dim, 0.0);
  if (centered) {
    for (std::size_t i = 0; i < n_samples; ++i) {
      const auto row = samples.row(i);
      for (std::size_t j = 0; j < dim; ++j) mean[j] += row[j];
    }
    for (double& x : mean) x /= static_cast<double>(n_samples);
  }
  DenseMatrix x(n_samples, dim);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto src = samples.row(i);
    auto dst = x.row(i);
    for (std::size_t j = 0; j < dim; ++j) dst[j] = src[j] - mean[j];
  }
  DenseMatrix cov = transpose_multiply(x, x);
  for (double& e : cov.data()) e /= static_cast<double>(n_samples);
  // Enforce exact symmetry lost to summation order.
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i + 1; j < dim; ++j) cov(j, i) = cov(i, j);
  CovarianceSpectrum out = eig_sym(cov);
  out.centered = centered;
  return out;
}

}  // namespace necode
