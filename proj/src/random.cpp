#include "spdnas/random.hpp"

#include <cmath>
#include <random>

#include "spdnas/error.hpp"
#include "spdnas/stiefel.hpp"

namespace spdnas {

Matrix random_symmetric(Eigen::Index n, Rng& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix s(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) s(i, j) = s(j, i) = normal(rng);
  }
  return s;
}

Matrix random_gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix a(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) a(i, j) = normal(rng);
  }
  return a;
}

Matrix random_spd(Eigen::Index n, Rng& rng, double cond) {
  if (!(cond >= 1.0)) throw ConfigError("random_spd: condition number must be at least 1");
  const Matrix q = random_stiefel(n, n, rng);
  const double half = 0.5 * std::log(cond);
  std::uniform_real_distribution<double> u(-half, half);
  Vector lam(n);
  for (Eigen::Index i = 0; i < n; ++i) lam(i) = std::exp(u(rng));
  if (n >= 2) {
    lam(0) = std::exp(half);
    lam(n - 1) = std::exp(-half);
  }
  return symmetrize(q * lam.asDiagonal() * q.transpose());
}

}  // namespace spdnas
