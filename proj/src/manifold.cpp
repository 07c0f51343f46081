#include "spdnas/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "spdnas/error.hpp"

namespace spdnas {

namespace {

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

}  // namespace

bool is_symmetric(const Matrix& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  if (m.size() == 0) return true;
  const double scale = m.cwiseAbs().maxCoeff();
  if (!std::isfinite(scale)) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * std::max(scale, 1e-300);
}

bool is_spd(const Matrix& m) {
  if (!is_symmetric(m) || m.size() == 0) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(m), Eigen::EigenvaluesOnly);
  return solver.info() == Eigen::Success && solver.eigenvalues().minCoeff() > 0.0;
}

void require_symmetric(const Matrix& m, const std::string& what) {
  if (m.rows() != m.cols()) {
    throw ContractError(what + ": expected a square matrix, got " + shape_of(m));
  }
  if (!is_symmetric(m)) throw ContractError(what + ": matrix is not symmetric");
}

void require_spd(const Matrix& m, const std::string& what) {
  require_symmetric(m, what);
  if (m.size() == 0) throw ContractError(what + ": empty matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(m), Eigen::EigenvaluesOnly);
  const double lo = solver.eigenvalues().minCoeff();
  if (!(lo > 0.0)) {
    std::ostringstream os;
    os << what << ": matrix is not positive definite (smallest eigenvalue " << lo << ")";
    throw DomainError(os.str());
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(what + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
  }
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix EigDecomp::reconstruct() const {
  return vectors * values.asDiagonal() * vectors.transpose();
}

EigDecomp sym_eig(const Matrix& s) {
  require_symmetric(s, "sym_eig");
  const Eigen::Index n = s.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(s));
  if (solver.info() != Eigen::Success) throw NumericError("sym_eig: eigensolver did not converge");

  // Eigen returns ascending order; flip to descending.
  EigDecomp out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = solver.eigenvalues()(n - 1 - k);
    out.vectors.col(k) = solver.eigenvectors().col(n - 1 - k);
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = std::abs(out.vectors(i, k));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (out.vectors(arg, k) < 0.0) out.vectors.col(k) *= -1.0;
  }
  return out;
}

bool MatrixFunction::needs_positive() const {
  switch (kind) {
    case Kind::kLog:
    case Kind::kSqrt:
    case Kind::kInvSqrt:
      return true;
    case Kind::kPower:
      return param != std::floor(param) || param < 0.0;
    default:
      return false;
  }
}

double MatrixFunction::value(double x) const {
  switch (kind) {
    case Kind::kLog:
      return std::log(x);
    case Kind::kExp:
      return std::exp(x);
    case Kind::kSqrt:
      return std::sqrt(x);
    case Kind::kInvSqrt:
      return 1.0 / std::sqrt(x);
    case Kind::kPower:
      return std::pow(x, param);
    case Kind::kRectify:
      return std::max(param, x);
    case Kind::kIdentity:
      return x;
  }
  return x;
}

double MatrixFunction::derivative(double x) const {
  switch (kind) {
    case Kind::kLog:
      return 1.0 / x;
    case Kind::kExp:
      return std::exp(x);
    case Kind::kSqrt:
      return 0.5 / std::sqrt(x);
    case Kind::kInvSqrt:
      return -0.5 / (x * std::sqrt(x));
    case Kind::kPower:
      return param * std::pow(x, param - 1.0);
    case Kind::kRectify:
      // Ties at the threshold count as not clamped.
      return x < param ? 0.0 : 1.0;
    case Kind::kIdentity:
      return 1.0;
  }
  return 1.0;
}

std::string MatrixFunction::name() const {
  switch (kind) {
    case Kind::kLog:
      return "log";
    case Kind::kExp:
      return "exp";
    case Kind::kSqrt:
      return "sqrt";
    case Kind::kInvSqrt:
      return "invsqrt";
    case Kind::kPower:
      return "power(" + std::to_string(param) + ")";
    case Kind::kRectify:
      return "rectify";
    case Kind::kIdentity:
      return "identity";
  }
  return "?";
}

Matrix apply_spectral(const EigDecomp& eig, const MatrixFunction& f) {
  const Eigen::Index n = eig.values.size();
  Vector fv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lambda = eig.values(i);
    if (f.needs_positive() && !(lambda > kEigenFloor)) {
      std::ostringstream os;
      os << "spd_fn(" << f.name() << "): eigenvalue " << lambda << " at index " << i
         << " is not positive";
      throw DomainError(os.str());
    }
    fv(i) = f.value(lambda);
  }
  return eig.vectors * fv.asDiagonal() * eig.vectors.transpose();
}

Matrix spd_fn(const Matrix& x, const MatrixFunction& f) { return apply_spectral(sym_eig(x), f); }

Matrix divided_differences(const Vector& values, const MatrixFunction& f) {
  const Eigen::Index n = values.size();
  Vector fv(n);
  for (Eigen::Index i = 0; i < n; ++i) fv(i) = f.value(values(i));
  Matrix p(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p(i, i) = f.derivative(values(i));
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double gap = values(i) - values(j);
      const double v = std::abs(gap) < kEigenFloor ? f.derivative(0.5 * (values(i) + values(j)))
                                                   : (fv(i) - fv(j)) / gap;
      p(i, j) = v;
      p(j, i) = v;
    }
  }
  return p;
}

double spd_distance(const Matrix& x1, const Matrix& x2) {
  require_same_shape(x1, x2, "spd_distance");
  const Matrix w = spd_fn(x1, MatrixFunction::invsqrt());
  const EigDecomp eig = sym_eig(symmetrize(w * x2 * w));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    if (!(eig.values(i) > kEigenFloor)) throw DomainError("spd_distance: second argument is not SPD");
    const double l = std::log(eig.values(i));
    sum += l * l;
  }
  return 0.5 * std::sqrt(sum);
}

Matrix exp_map(const Matrix& base, const Matrix& tangent) {
  require_same_shape(base, tangent, "exp_map");
  const EigDecomp eig = sym_eig(base);
  const Matrix s = apply_spectral(eig, MatrixFunction::sqrt());
  const Matrix si = apply_spectral(eig, MatrixFunction::invsqrt());
  const Matrix inner = spd_fn(symmetrize(si * tangent * si), MatrixFunction::exp());
  return symmetrize(s * inner * s);
}

Matrix log_map(const Matrix& base, const Matrix& point) {
  require_same_shape(base, point, "log_map");
  const EigDecomp eig = sym_eig(base);
  const Matrix s = apply_spectral(eig, MatrixFunction::sqrt());
  const Matrix si = apply_spectral(eig, MatrixFunction::invsqrt());
  const Matrix inner = spd_fn(symmetrize(si * point * si), MatrixFunction::log());
  return symmetrize(s * inner * s);
}

Matrix congruence_transport(const Matrix& x, const Matrix& a, Transport direction) {
  require_same_shape(x, a, "congruence_transport");
  const Matrix f = spd_fn(a, direction == Transport::kTowardIdentity ? MatrixFunction::invsqrt()
                                                                      : MatrixFunction::sqrt());
  return symmetrize(f * x * f);
}

}  // namespace spdnas
