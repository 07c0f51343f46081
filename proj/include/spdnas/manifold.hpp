#pragma once

#include <Eigen/Dense>

#include <string>

namespace spdnas {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Relative tolerance used to decide whether a matrix is symmetric.
inline constexpr double kSymmetryTol = 1e-10;
// Eigenvalues at or below this threshold are outside the domain of log,
// sqrt and invsqrt.
inline constexpr double kEigenFloor = 1e-12;

bool is_symmetric(const Matrix& m, double rel_tol = kSymmetryTol);
bool is_spd(const Matrix& m);

// Throws ContractError naming `what` if `m` is not square and symmetric.
void require_symmetric(const Matrix& m, const std::string& what);
// Throws ContractError/DomainError naming `what` if `m` is not SPD.
void require_spd(const Matrix& m, const std::string& what);
void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what);

Matrix symmetrize(const Matrix& m);

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// and a fixed eigenvector sign: the largest-magnitude entry of each column
/// is positive (first such entry on exact magnitude ties).
struct EigDecomp {
  Matrix vectors;
  Vector values;

  Matrix reconstruct() const;
};

EigDecomp sym_eig(const Matrix& s);

// Scalar function applied to the spectrum of a symmetric matrix.
struct MatrixFunction {
  enum class Kind { kLog, kExp, kSqrt, kInvSqrt, kPower, kRectify, kIdentity };

  Kind kind = Kind::kIdentity;
  // Exponent for kPower, threshold for kRectify.
  double param = 0.0;

  static MatrixFunction log() { return {Kind::kLog, 0.0}; }
  static MatrixFunction exp() { return {Kind::kExp, 0.0}; }
  static MatrixFunction sqrt() { return {Kind::kSqrt, 0.0}; }
  static MatrixFunction invsqrt() { return {Kind::kInvSqrt, 0.0}; }
  static MatrixFunction power(double p) { return {Kind::kPower, p}; }
  static MatrixFunction rectify(double eps) { return {Kind::kRectify, eps}; }
  static MatrixFunction identity() { return {Kind::kIdentity, 0.0}; }

  bool needs_positive() const;
  double value(double x) const;
  double derivative(double x) const;
  std::string name() const;
};

// U f(Λ) Uᵀ from an existing decomposition. Throws DomainError naming the
// offending eigenvalue when f requires a positive spectrum.
Matrix apply_spectral(const EigDecomp& eig, const MatrixFunction& f);
Matrix spd_fn(const Matrix& x, const MatrixFunction& f);

// Divided-difference matrix of f on the spectrum: P_ij = (f(λi) − f(λj)) /
// (λi − λj), with f′ of the midpoint when the gap is below kEigenFloor.
Matrix divided_differences(const Vector& values, const MatrixFunction& f);

// Affine-invariant distance 0.5‖log(X1^{-1/2} X2 X1^{-1/2})‖_F.
double spd_distance(const Matrix& x1, const Matrix& x2);

// X^{1/2} exp(X^{-1/2} Y X^{-1/2}) X^{1/2}.
Matrix exp_map(const Matrix& base, const Matrix& tangent);
// X^{1/2} log(X^{-1/2} Z X^{-1/2}) X^{1/2}.
Matrix log_map(const Matrix& base, const Matrix& point);

enum class Transport { kTowardIdentity, kFromIdentity };

// toward_identity: A^{-1/2} X A^{-1/2}; from_identity: A^{1/2} X A^{1/2}.
Matrix congruence_transport(const Matrix& x, const Matrix& a, Transport direction);

}  // namespace spdnas
