#pragma once

#include <span>
#include <string>
#include <vector>

#include "spdnas/manifold.hpp"
#include "spdnas/tape.hpp"

namespace spdnas {

enum class WfmSolver { kKarcher, kRecursive };

std::string to_string(WfmSolver s);
WfmSolver wfm_solver_from_string(const std::string& s);

struct WfmConfig {
  WfmSolver solver = WfmSolver::kKarcher;
  int max_iters = 10;
  // Karcher stops once ‖Σ wᵢ log_M(Xᵢ)‖_F < tol. A tolerance of zero always
  // runs max_iters iterations, which keeps the unrolled graph fixed for
  // finite-difference checks.
  double tol = 1e-6;

  // Throws ConfigError.
  void validate() const;
};

// Non-convergence is reported through `converged`, never thrown.
struct WfmResult {
  Matrix mean;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
};

struct WfmVar {
  Var mean;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
};

// Throws ContractError unless w is nonnegative and sums to one within 1e-10.
void validate_weights(const Vector& w, std::size_t expected_count);

/// Karcher flow M ← exp_M(Σ wᵢ log_M(Xᵢ)), started from the weighted
/// arithmetic mean, unit step size.
WfmResult karcher_wfm(std::span<const Matrix> points, const Vector& w, const WfmConfig& cfg = {});
/// Recursive geodesic mean: M₁ = X₁, Mₖ on the geodesic from Mₖ₋₁ to Xₖ at
/// tₖ = wₖ / Σ_{j≤k} wⱼ. Order dependent for more than two points.
WfmResult recursive_wfm(std::span<const Matrix> points, const Vector& w);
WfmResult batch_barycenter(std::span<const Matrix> points, const WfmConfig& cfg = {});
// Dispatches on cfg.solver.
WfmResult weighted_frechet_mean(std::span<const Matrix> points, const Vector& w,
                                const WfmConfig& cfg = {});

// Differentiable versions; the gradient is that of the unrolled iterations
// actually executed.
WfmVar karcher_wfm(std::span<const Var> points, Var w, const WfmConfig& cfg = {});
WfmVar recursive_wfm(std::span<const Var> points, Var w);
WfmVar weighted_frechet_mean(std::span<const Var> points, Var w, const WfmConfig& cfg = {});
WfmVar barycenter(std::span<const Var> points, const WfmConfig& cfg = {});

// ‖Σ wᵢ log_M(Xᵢ)‖_F.
double karcher_residual(const Matrix& m, std::span<const Matrix> points, const Vector& w);

}  // namespace spdnas
