#pragma once

#include <span>
#include <utility>
#include <vector>

#include "spdnas/simplex.hpp"
#include "spdnas/tape.hpp"

// Differentiable primitives recorded on a Tape. Matrix-valued ops return
// symmetric-tagged nodes whenever the result is symmetric by construction,
// which makes the reverse sweep symmetrize their adjoints.
namespace spdnas::op {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double c);
// s is 1x1.
Var scale(Var a, Var s);
Var matmul(Var a, Var b);
Var transpose(Var a);

// Wᵀ X W.
Var congruence(Var w, Var x);
// S X S for a symmetric S.
Var sandwich(Var s, Var x);

// U f(Λ) Uᵀ. The input is symmetrized before factorization; the node caches
// its decomposition. Backward uses the divided-difference rule.
Var spectral(Var x, const MatrixFunction& f);
// Two spectral functions sharing one factorization of x.
std::pair<Var, Var> spectral_pair(Var x, const MatrixFunction& f, const MatrixFunction& g);

// Σ wᵢ Mᵢ, w a column vector with one entry per matrix.
Var weighted_sum(Var w, std::span<const Var> mats);
// (1/k) Σ Mᵢ.
Var mean(std::span<const Var> mats);
Var sum(std::span<const Var> terms);

Var block_diag(Var a, Var b);

enum class PoolKind { kAverage, kMax };
// k×k pooling with stride k on a square matrix, zero-padded bottom/right to
// a multiple of k. Max pooling routes the adjoint to the first maximum in
// row-major order.
Var pool(Var x, int k, PoolKind kind);

// Upper triangle (row-major) with off-diagonal entries scaled by √2, so the
// Euclidean inner product of two flattenings equals the Frobenius product.
Var triu_flatten(Var x);
// Stacks column vectors.
Var vconcat(std::span<const Var> parts);
// Sub-vector of a column vector.
Var gather(Var v, std::span<const Eigen::Index> indices);

Var activation(Var z, Activation a);

// −log softmax(logits)[label] for a column vector of logits.
Var cross_entropy(Var logits, Eigen::Index label);

Var frob_sq(Var x);
Var trace(Var x);
// ⟨A, B⟩_F.
Var dot(Var a, Var b);

}  // namespace spdnas::op
