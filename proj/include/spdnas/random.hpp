#pragma once

#include "spdnas/manifold.hpp"
#include "spdnas/rng.hpp"

namespace spdnas {

// Symmetric matrix with independent N(0, scale²) entries on and above the
// diagonal.
Matrix random_symmetric(Eigen::Index n, Rng& rng, double scale = 1.0);

// Q diag(λ) Qᵀ with Q Haar-orthogonal and log-uniform eigenvalues spanning
// exactly the given condition number (λ_max/λ_min = cond, geometric mean 1).
Matrix random_spd(Eigen::Index n, Rng& rng, double cond = 10.0);

Matrix random_gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0);

}  // namespace spdnas
