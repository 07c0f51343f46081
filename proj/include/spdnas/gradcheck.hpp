#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spdnas/tape.hpp"

namespace spdnas {

// Builds a scalar on `tape` from leaves holding the inputs.
using GradFn = std::function<Var(Tape& tape, std::span<const Var> leaves)>;

struct GradcheckOptions {
  double step = 1e-6;
  double tol = 1e-4;
  // Coordinates checked per leaf; 0 checks all. Sampled coordinates are
  // drawn from `seed`.
  std::size_t max_coords_per_leaf = 0;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  std::string name;
  double max_rel_error = 0.0;
  // Worst coordinate.
  std::size_t leaf = 0;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords = 0;
  bool passed = false;
  // Set when the function threw; the check then fails.
  std::string error;
};

/// Central differences against the reverse sweep, one coordinate at a time.
/// Symmetric leaves are perturbed along Eᵢⱼ + Eⱼᵢ so they stay symmetric.
/// Per coordinate, |a − n| / max(|a|, |n|, floor) with floor = 1e-3 times
/// the largest analytic entry over all leaves (and at least 1e-8), so
/// entries that are zero up to round-off do not dominate. Never throws.
GradcheckReport gradcheck(const std::string& name, const GradFn& f, std::span<const Matrix> inputs,
                          const std::vector<bool>& symmetric, const GradcheckOptions& opts = {});

/// The library's gradient suite: every layer, the Fréchet solvers, the mixed
/// edge, node aggregation and a full five-node supernet, all at n ≤ 8.
/// `inject_fault` appends a case whose backward is deliberately wrong.
std::vector<GradcheckReport> gradcheck_suite(std::uint64_t seed = 0, bool inject_fault = false);

}  // namespace spdnas
