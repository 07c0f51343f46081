#pragma once

#include <string>

#include "spdnas/manifold.hpp"

namespace spdnas {

// Maps unconstrained logits onto the probability simplex.
enum class Activation { kSparsemax, kSoftmax, kSigmoid };

std::string to_string(Activation a);
// Accepts "sparsemax", "softmax", "sigmoid"; throws ConfigError otherwise.
Activation activation_from_string(const std::string& s);

/// Euclidean projection of `z` onto the probability simplex (sort and
/// threshold). The support is the largest k with 1 + k·z₍ₖ₎ > Σ_{j≤k} z₍ⱼ₎;
/// equal entries keep their original order.
Vector sparsemax(const Vector& z);
// Vector-Jacobian product: the adjoint restricted to the support minus its
// mean over the support, zero elsewhere.
Vector sparsemax_vjp(const Vector& output, const Vector& adjoint);

Vector softmax(const Vector& z);
Vector softmax_vjp(const Vector& output, const Vector& adjoint);

// σ(zᵢ) / Σⱼ σ(zⱼ).
Vector normalized_sigmoid(const Vector& z);
Vector normalized_sigmoid_vjp(const Vector& z, const Vector& output, const Vector& adjoint);

Vector activate(Activation a, const Vector& z);
Vector activate_vjp(Activation a, const Vector& z, const Vector& output, const Vector& adjoint);

// True when off-support entries of the activation carry exactly zero
// derivative, so zero-weight terms can be dropped from a mixture.
inline bool zero_weights_are_inert(Activation a) { return a == Activation::kSparsemax; }

}  // namespace spdnas
