#include "spdnas/frechet.hpp"

#include <array>
#include <cmath>
#include <sstream>

#include "spdnas/error.hpp"
#include "spdnas/ops.hpp"

namespace spdnas {

std::string to_string(WfmSolver s) { return s == WfmSolver::kKarcher ? "karcher" : "recursive"; }

WfmSolver wfm_solver_from_string(const std::string& s) {
  if (s == "karcher") return WfmSolver::kKarcher;
  if (s == "recursive") return WfmSolver::kRecursive;
  throw ConfigError("unknown wFM solver '" + s + "' (expected karcher or recursive)");
}

void WfmConfig::validate() const {
  if (max_iters < 1) throw ConfigError("wfm.max_iters must be >= 1");
  if (!(tol >= 0.0) || !std::isfinite(tol)) throw ConfigError("wfm.tol must be finite and >= 0");
}

void validate_weights(const Vector& w, std::size_t expected_count) {
  if (static_cast<std::size_t>(w.size()) != expected_count) {
    std::ostringstream os;
    os << "wfm: " << expected_count << " points but " << w.size() << " weights";
    throw ContractError(os.str());
  }
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(w(i) >= 0.0)) throw ContractError("wfm: negative or NaN weight at index " + std::to_string(i));
  }
  if (std::abs(w.sum() - 1.0) > 1e-10) {
    std::ostringstream os;
    os.precision(17);
    os << "wfm: weights sum to " << w.sum() << ", expected 1";
    throw ContractError(os.str());
  }
}

namespace {

void check_points(std::span<const Var> points) {
  if (points.empty()) throw ContractError("wfm: empty point list");
  for (const Var& p : points) {
    if (p.rows() != p.cols() || p.rows() != points[0].rows()) {
      throw ShapeError("wfm: points must be square matrices of equal dimension");
    }
  }
}

// Scalar w_k / c for a 1x1 Var w_k and a cumulative 1x1 Var c.
Var ratio(Var num, Var den) {
  const double n = num.scalar();
  const double d = den.scalar();
  return num.tape()->record("ratio", {num, den}, Matrix::Constant(1, 1, n / d),
                            [num, den](const Matrix& g, Adjoints& out) {
                              const double nv = num.scalar();
                              const double dv = den.scalar();
                              out.add(num, Matrix::Constant(1, 1, g(0, 0) / dv));
                              out.add(den, Matrix::Constant(1, 1, -g(0, 0) * nv / (dv * dv)));
                            });
}

Var entry(Var v, Eigen::Index i) {
  const Eigen::Index idx[1] = {i};
  return op::gather(v, idx);
}

}  // namespace

WfmVar karcher_wfm(std::span<const Var> points, Var w, const WfmConfig& cfg) {
  cfg.validate();
  check_points(points);
  validate_weights(w.value().col(0), points.size());

  WfmVar out;
  Var m = op::weighted_sum(w, points);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    out.iterations = it;
    auto [s, si] = op::spectral_pair(m, MatrixFunction::sqrt(), MatrixFunction::invsqrt());
    std::vector<Var> logs;
    logs.reserve(points.size());
    for (const Var& x : points) logs.push_back(op::spectral(op::sandwich(si, x), MatrixFunction::log()));
    Var t = op::weighted_sum(w, logs);
    // Tangent step in the ambient coordinates at M: S T S.
    out.residual = (s.value() * t.value() * s.value()).norm();
    if (out.residual < cfg.tol) {
      out.converged = true;
      break;
    }
    m = op::sandwich(s, op::spectral(t, MatrixFunction::exp()));
  }
  out.mean = m;
  return out;
}

WfmVar recursive_wfm(std::span<const Var> points, Var w) {
  check_points(points);
  validate_weights(w.value().col(0), points.size());
  const Vector& wv = w.value().col(0);

  // Start from the first point carrying weight; earlier zero-weight points
  // leave the running mean undefined.
  std::size_t first = 0;
  while (first < points.size() && !(wv(static_cast<Eigen::Index>(first)) > 0.0)) ++first;

  WfmVar out;
  out.converged = true;
  Var m = points[first];
  Var cumulative = entry(w, static_cast<Eigen::Index>(first));
  for (std::size_t k = first + 1; k < points.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    Var wk = entry(w, kk);
    const std::array<Var, 2> parts = {cumulative, wk};
    cumulative = op::sum(parts);
    if (!(wv(kk) > 0.0)) continue;
    Var t = ratio(wk, cumulative);
    auto [s, si] = op::spectral_pair(m, MatrixFunction::sqrt(), MatrixFunction::invsqrt());
    Var l = op::spectral(op::sandwich(si, points[k]), MatrixFunction::log());
    m = op::sandwich(s, op::spectral(op::scale(l, t), MatrixFunction::exp()));
    ++out.iterations;
  }
  out.mean = m;
  return out;
}

WfmVar weighted_frechet_mean(std::span<const Var> points, Var w, const WfmConfig& cfg) {
  return cfg.solver == WfmSolver::kKarcher ? karcher_wfm(points, w, cfg) : recursive_wfm(points, w);
}

WfmVar barycenter(std::span<const Var> points, const WfmConfig& cfg) {
  check_points(points);
  const auto n = static_cast<Eigen::Index>(points.size());
  Var w = points[0].tape()->constant(Matrix::Constant(n, 1, 1.0 / static_cast<double>(n)));
  return weighted_frechet_mean(points, w, cfg);
}

namespace {

template <typename Fn>
WfmResult run_on_scratch(std::span<const Matrix> points, const Vector& w, Fn&& fn) {
  if (points.empty()) throw ContractError("wfm: empty point list");
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    require_symmetric(points[i], "wfm point " + std::to_string(i));
    vars.push_back(tape.constant(points[i], true));
  }
  Var wv = tape.constant(Matrix(w));
  WfmVar r = fn(std::span<const Var>(vars), wv);
  return WfmResult{r.mean.value(), r.iterations, r.converged, r.residual};
}

}  // namespace

WfmResult karcher_wfm(std::span<const Matrix> points, const Vector& w, const WfmConfig& cfg) {
  return run_on_scratch(points, w, [&](std::span<const Var> p, Var wv) { return karcher_wfm(p, wv, cfg); });
}

WfmResult recursive_wfm(std::span<const Matrix> points, const Vector& w) {
  return run_on_scratch(points, w, [&](std::span<const Var> p, Var wv) { return recursive_wfm(p, wv); });
}

WfmResult weighted_frechet_mean(std::span<const Matrix> points, const Vector& w, const WfmConfig& cfg) {
  return cfg.solver == WfmSolver::kKarcher ? karcher_wfm(points, w, cfg) : recursive_wfm(points, w);
}

WfmResult batch_barycenter(std::span<const Matrix> points, const WfmConfig& cfg) {
  if (points.empty()) throw ContractError("wfm: empty point list");
  const auto n = static_cast<Eigen::Index>(points.size());
  return weighted_frechet_mean(points, Vector::Constant(n, 1.0 / static_cast<double>(n)), cfg);
}

double karcher_residual(const Matrix& m, std::span<const Matrix> points, const Vector& w) {
  Matrix t = Matrix::Zero(m.rows(), m.cols());
  for (std::size_t i = 0; i < points.size(); ++i) {
    t += w(static_cast<Eigen::Index>(i)) * log_map(m, points[i]);
  }
  return t.norm();
}

}  // namespace spdnas
