#include "spdnas/stiefel.hpp"

#include <cmath>
#include <random>

#include "spdnas/error.hpp"

namespace spdnas {

double orthonormality_error(const Matrix& w) {
  return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

bool is_stiefel(const Matrix& w, double tol) {
  return w.rows() >= w.cols() && orthonormality_error(w) <= tol;
}

Matrix random_stiefel(Eigen::Index n, Eigen::Index m, Rng& rng) {
  if (m > n) throw ShapeError("random_stiefel: more columns than rows");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) a(i, j) = normal(rng);
  }
  return qr_retract(a);
}

Matrix project_tangent(const Matrix& w, const Matrix& g) {
  const Matrix wtg = w.transpose() * g;
  return g - w * (0.5 * (wtg + wtg.transpose()));
}

Matrix qr_retract(const Matrix& y) {
  const Eigen::Index n = y.rows();
  const Eigen::Index m = y.cols();
  if (m > n) throw ShapeError("qr_retract: more columns than rows");
  Eigen::HouseholderQR<Matrix> qr(y);
  Matrix q = qr.householderQ() * Matrix::Identity(n, m);
  const Matrix r = qr.matrixQR().topLeftCorner(m, m).triangularView<Eigen::Upper>();
  const double scale = std::max(y.norm(), 1e-300);
  for (Eigen::Index j = 0; j < m; ++j) {
    if (std::abs(r(j, j)) <= 1e-12 * scale) {
      throw NumericError("qr_retract: rank-deficient input (column " + std::to_string(j) + ")");
    }
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

Matrix riem_sgd_step(const Matrix& w, const Matrix& euclid_grad, double lr) {
  if (w.rows() != euclid_grad.rows() || w.cols() != euclid_grad.cols()) {
    throw ShapeError("riem_sgd_step: gradient shape does not match the parameter");
  }
  if (lr == 0.0 || (euclid_grad.array() == 0.0).all()) return w;
  return qr_retract(w - lr * project_tangent(w, euclid_grad));
}

Matrix spd_sgd_step(const Matrix& g, const Matrix& euclid_grad, double lr) {
  require_same_shape(g, euclid_grad, "spd_sgd_step");
  if (lr == 0.0 || (euclid_grad.array() == 0.0).all()) return g;
  const Matrix riem = g * symmetrize(euclid_grad) * g;
  return exp_map(g, -lr * symmetrize(riem));
}

}  // namespace spdnas
