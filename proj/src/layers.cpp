#include "spdnas/layers.hpp"

#include <string>

#include "spdnas/error.hpp"

namespace spdnas {

BatchNormState BatchNormState::identity(Eigen::Index n, double momentum) {
  return {Matrix::Identity(n, n), Matrix::Identity(n, n), momentum};
}

namespace layer {

Var bimap(Var x, Var w) {
  if (w.cols() > w.rows()) {
    throw ShapeError("bimap: weight " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                     " would increase the dimension");
  }
  return op::congruence(w, x);
}

Var reeig(Var x, double epsilon) { return op::spectral(x, MatrixFunction::rectify(epsilon)); }

Var logeig(Var x) { return op::spectral(x, MatrixFunction::log()); }

Var expeig(Var s) { return op::spectral(s, MatrixFunction::exp()); }

std::vector<Var> batchnorm(std::span<const Var> batch, Var bias, Matrix& running_mean,
                           double momentum, NormMode mode, const WfmConfig& cfg) {
  if (batch.empty()) throw ContractError("batchnorm: empty batch");
  Tape& tape = *batch[0].tape();
  const Var g_half = op::spectral(bias, MatrixFunction::sqrt());

  Var center_inv;
  if (mode == NormMode::kEval) {
    center_inv = tape.constant(spd_fn(running_mean, MatrixFunction::invsqrt()), true);
  } else {
    const WfmVar mean = barycenter(batch, cfg);
    center_inv = op::spectral(mean.mean, MatrixFunction::invsqrt());
    if (mode == NormMode::kTrain) {
      const Matrix pts[2] = {mean.mean.value(), running_mean};
      Vector w(2);
      w << 1.0 - momentum, momentum;
      running_mean = karcher_wfm(pts, w, cfg).mean;
    }
  }

  std::vector<Var> out;
  out.reserve(batch.size());
  for (const Var& x : batch) out.push_back(op::sandwich(g_half, op::sandwich(center_inv, x)));
  return out;
}

std::vector<Var> weighted_riem_pooling(std::span<const Var> channels,
                                       std::span<const Var> weight_rows, const WfmConfig& cfg) {
  if (channels.empty()) throw ContractError("weighted_riem_pooling: no input channels");
  std::vector<Var> out;
  out.reserve(weight_rows.size());
  for (std::size_t j = 0; j < weight_rows.size(); ++j) {
    if (weight_rows[j].rows() != static_cast<Eigen::Index>(channels.size())) {
      throw ShapeError("weighted_riem_pooling: weight row " + std::to_string(j) + " has " +
                       std::to_string(weight_rows[j].rows()) + " entries for " +
                       std::to_string(channels.size()) + " channels");
    }
    out.push_back(weighted_frechet_mean(channels, weight_rows[j], cfg).mean);
  }
  return out;
}

Var reduced_pool(Var x, int kernel, op::PoolKind kind) {
  return expeig(op::pool(logeig(x), kernel, kind));
}

Var skip_reduced(Var x, Var w1, Var w2) {
  const Var c1 = op::spectral(bimap(x, w1), MatrixFunction::identity());
  const Var c2 = op::spectral(bimap(x, w2), MatrixFunction::identity());
  return op::block_diag(c1, c2);
}

Var none(Tape& tape, Eigen::Index n) { return tape.constant(Matrix::Identity(n, n), true); }

}  // namespace layer

void validate_pool_kernel(int kernel) {
  if (kernel != 2 && kernel != 4) {
    throw ConfigError("pooling kernel must be 2 or 4, got " + std::to_string(kernel));
  }
}

Matrix bimap_forward(const Matrix& x, const Matrix& w) {
  require_spd(x, "bimap input");
  if (w.rows() != x.rows()) {
    throw ShapeError("bimap: weight has " + std::to_string(w.rows()) + " rows, input is " +
                     std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  }
  Tape t;
  return layer::bimap(t.constant(x, true), t.constant(w)).value();
}

Matrix reeig_forward(const Matrix& x, const ReEigConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw ConfigError("reeig: epsilon must be positive");
  require_symmetric(x, "reeig input");
  Tape t;
  return layer::reeig(t.constant(x, true), cfg.epsilon).value();
}

Matrix logeig_forward(const Matrix& x) {
  require_symmetric(x, "logeig input");
  Tape t;
  return layer::logeig(t.constant(x, true)).value();
}

Matrix expeig_forward(const Matrix& s) {
  require_symmetric(s, "expeig input");
  Tape t;
  return layer::expeig(t.constant(s, true)).value();
}

std::vector<Matrix> batchnorm_forward(std::span<const Matrix> batch, BatchNormState& state,
                                      NormMode mode, const WfmConfig& cfg) {
  if (batch.empty()) {
    if (mode != NormMode::kEval) throw ContractError("batchnorm: empty batch in train mode");
    return {};
  }
  Tape t;
  std::vector<Var> xs;
  for (const Matrix& x : batch) {
    require_same_shape(x, state.running_mean, "batchnorm");
    xs.push_back(t.constant(x, true));
  }
  const std::vector<Var> ys =
      layer::batchnorm(xs, t.constant(state.bias, true), state.running_mean, state.momentum, mode, cfg);
  std::vector<Matrix> out;
  out.reserve(ys.size());
  for (const Var& y : ys) out.push_back(y.value());
  return out;
}

std::vector<Matrix> weighted_riem_pooling(std::span<const Matrix> channels, const Matrix& weights,
                                          const WfmConfig& cfg) {
  if (channels.empty()) throw ContractError("weighted_riem_pooling: no input channels");
  if (weights.cols() != static_cast<Eigen::Index>(channels.size())) {
    throw ShapeError("weighted_riem_pooling: weight rows have " + std::to_string(weights.cols()) +
                     " entries for " + std::to_string(channels.size()) + " channels");
  }
  Tape t;
  std::vector<Var> cs;
  for (const Matrix& c : channels) cs.push_back(t.constant(c, true));
  std::vector<Var> rows;
  for (Eigen::Index j = 0; j < weights.rows(); ++j) {
    rows.push_back(t.constant(Matrix(weights.row(j).transpose())));
  }
  std::vector<Matrix> out;
  for (const Var& v : layer::weighted_riem_pooling(cs, rows, cfg)) out.push_back(v.value());
  return out;
}

Matrix avg_pool_reduced(const Matrix& x, int kernel) {
  validate_pool_kernel(kernel);
  require_symmetric(x, "avg_pool_reduced input");
  Tape t;
  return layer::reduced_pool(t.constant(x, true), kernel, op::PoolKind::kAverage).value();
}

Matrix max_pool_reduced(const Matrix& x, int kernel) {
  validate_pool_kernel(kernel);
  require_symmetric(x, "max_pool_reduced input");
  Tape t;
  return layer::reduced_pool(t.constant(x, true), kernel, op::PoolKind::kMax).value();
}

Matrix skip_reduced(const Matrix& x, const Matrix& w1, const Matrix& w2) {
  require_symmetric(x, "skip_reduced input");
  if (w1.cols() != w2.cols()) throw ConfigError("skip_reduced: blocks must have equal size");
  if (w1.rows() != x.rows() || w2.rows() != x.rows()) throw ShapeError("skip_reduced: weight rows != input dim");
  Tape t;
  return layer::skip_reduced(t.constant(x, true), t.constant(w1), t.constant(w2)).value();
}

Matrix skip_normal(const Matrix& x) { return x; }

Matrix none_normal(const Matrix& x) { return Matrix::Identity(x.rows(), x.cols()); }

}  // namespace spdnas
