#pragma once

#include <doctest.h>

#include "spdnas/manifold.hpp"
#include "spdnas/random.hpp"
#include "spdnas/rng.hpp"

namespace spdnas::testing {

inline Matrix diag(std::initializer_list<double> v) {
  Vector d(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) d(i++) = x;
  return d.asDiagonal();
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline double min_eig(const Matrix& x) { return sym_eig(x).values.minCoeff(); }

}  // namespace spdnas::testing
