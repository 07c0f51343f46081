#pragma once

#include <span>
#include <vector>

#include "spdnas/frechet.hpp"
#include "spdnas/ops.hpp"

namespace spdnas {

struct ReEigConfig {
  double epsilon = 1e-4;
};

struct BatchNormState {
  Matrix running_mean;
  Matrix bias;
  // Weight of the previous running mean in the running update.
  double momentum = 0.9;

  static BatchNormState identity(Eigen::Index n, double momentum = 0.9);
};

enum class NormMode {
  kTrain,        // batch statistics, running mean updated
  kTrainFrozen,  // batch statistics, running mean left untouched
  kEval,         // running mean used for centering
};

// Tape-level layers. Value-level wrappers follow below.
namespace layer {

// Wᵀ X W with a column-orthonormal n×m W.
Var bimap(Var x, Var w);
// U max(εI, Λ) Uᵀ.
Var reeig(Var x, double epsilon);
Var logeig(Var x);
Var expeig(Var s);

/// Riemannian batch normalization. Train modes center by the batch
/// barycenter (differentiated through its unrolled Karcher iterations);
/// kTrain also moves `running_mean` toward the batch mean with weights
/// (1 − momentum, momentum). The running mean never enters the tape as a
/// differentiable value.
std::vector<Var> batchnorm(std::span<const Var> batch, Var bias, Matrix& running_mean,
                           double momentum, NormMode mode, const WfmConfig& cfg);

// Output channel j is the wFM of the input channels under weight_rows[j].
std::vector<Var> weighted_riem_pooling(std::span<const Var> channels,
                                       std::span<const Var> weight_rows, const WfmConfig& cfg);

// LogEig → k×k pooling (stride k, zero-padded in the log domain) → ExpEig.
Var reduced_pool(Var x, int kernel, op::PoolKind kind);

// Two BiMaps to m/2, each block rebuilt from its eigendecomposition, then
// assembled block-diagonally.
Var skip_reduced(Var x, Var w1, Var w2);

Var none(Tape& tape, Eigen::Index n);

}  // namespace layer

Matrix bimap_forward(const Matrix& x, const Matrix& w);
Matrix reeig_forward(const Matrix& x, const ReEigConfig& cfg = {});
Matrix logeig_forward(const Matrix& x);
Matrix expeig_forward(const Matrix& s);
std::vector<Matrix> batchnorm_forward(std::span<const Matrix> batch, BatchNormState& state,
                                      NormMode mode, const WfmConfig& cfg = {});
// weights: one row per output channel, each on the probability simplex.
std::vector<Matrix> weighted_riem_pooling(std::span<const Matrix> channels, const Matrix& weights,
                                          const WfmConfig& cfg = {});
// kernel must be 2 or 4.
Matrix avg_pool_reduced(const Matrix& x, int kernel);
Matrix max_pool_reduced(const Matrix& x, int kernel);
Matrix skip_reduced(const Matrix& x, const Matrix& w1, const Matrix& w2);
Matrix skip_normal(const Matrix& x);
Matrix none_normal(const Matrix& x);

// Throws ConfigError unless kernel is 2 or 4.
void validate_pool_kernel(int kernel);

}  // namespace spdnas
