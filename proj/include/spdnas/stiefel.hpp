#pragma once

#include "spdnas/manifold.hpp"
#include "spdnas/rng.hpp"

namespace spdnas {

// ‖WᵀW − I‖_F.
double orthonormality_error(const Matrix& w);
bool is_stiefel(const Matrix& w, double tol = 1e-8);

// Q factor of an n×m standard-normal draw.
Matrix random_stiefel(Eigen::Index n, Eigen::Index m, Rng& rng);

// G − W sym(WᵀG).
Matrix project_tangent(const Matrix& w, const Matrix& g);

// Thin Householder QR with the signs of diag(R) forced positive. Throws
// NumericError when the input is numerically rank deficient.
Matrix qr_retract(const Matrix& y);

/// One Riemannian SGD step on the Stiefel manifold: project the Euclidean
/// gradient onto the tangent space at W, step by −lr, retract. A zero step
/// returns W unchanged.
Matrix riem_sgd_step(const Matrix& w, const Matrix& euclid_grad, double lr);

// Riemannian gradient step on the SPD manifold under the affine-invariant
// metric: exp_G(−lr · G sym(∇) G). A zero step returns G unchanged.
Matrix spd_sgd_step(const Matrix& g, const Matrix& euclid_grad, double lr);

}  // namespace spdnas
