#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace necode {

using Vector = std::vector<double>;

/// Dense real matrix stored row-major.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> values);
  static DenseMatrix from_columns(std::span<const Vector> columns);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Vector column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);

  DenseMatrix transpose() const;
  /// Columns [first, first + count).
  DenseMatrix columns(std::size_t first, std::size_t count) const;

  double frobenius_norm() const;
  bool is_finite() const;

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b);
Vector operator*(const DenseMatrix& a, std::span<const double> x);
DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator*(double s, const DenseMatrix& a);
/// aᵀ·b without forming the transpose.
DenseMatrix transpose_multiply(const DenseMatrix& a, const DenseMatrix& b);
/// aᵀ·x.
Vector transpose_multiply(const DenseMatrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

/// Factors of W = U·diag(S)·Vᵀ with singular values in ascending order.
///
/// S holds the r = min(m, n) singular values. U is m×m and V is n×n; the
/// pairing is aligned to the right end of each factor: S[i] belongs to
/// column (m - r + i) of U and column (n - r + i) of V. Leading columns of the
/// wider factor complete it to an orthonormal basis (for V these span the
/// exact nullspace of a wide matrix). Each column of V has its first
/// non-negligible component non-negative.
struct SpectralFactors {
  DenseMatrix u;
  Vector s;
  DenseMatrix v;

  std::size_t m() const { return u.rows(); }
  std::size_t n() const { return v.rows(); }

  /// Singular value attached to every column of V, ascending, length n.
  /// Columns that complete V for wide matrices carry their numerically
  /// computed (round-off sized) value.
  Vector right_spectrum;

  DenseMatrix reconstruct() const;
};

struct CovarianceSpectrum {
  DenseMatrix covariance;
  DenseMatrix eigvecs;
  Vector eigvals;  // ascending
  bool centered = true;
};

/// One-sided (Hestenes) Jacobi SVD. Throws NumericalError on non-finite input.
SpectralFactors svd(const DenseMatrix& w);

/// Cyclic Jacobi eigendecomposition of a symmetric matrix, ascending eigenvalues.
CovarianceSpectrum eig_sym(const DenseMatrix& c);

/// Covariance (1/N)·XᵀX of the rows of `samples` (mean-centered unless
/// `centered` is false) and its eigendecomposition.
CovarianceSpectrum pca(const DenseMatrix& samples, bool centered = true);

/// Right-singular vectors whose singular value is at most `tol`.
std::vector<Vector> nullspace(const DenseMatrix& w, double tol);

double spectral_norm(const DenseMatrix& w);

/// Cosines of the principal angles between the column spans of two
/// column-orthonormal matrices, descending.
Vector principal_angles(const DenseMatrix& a, const DenseMatrix& b);

/// Orthonormal basis of the complement of the (orthonormal) columns of q.
DenseMatrix orthonormal_complement(const DenseMatrix& q);

/// ‖AᵀA − I‖_F.
double orthogonality_residual(const DenseMatrix& a);

}  // namespace necode
