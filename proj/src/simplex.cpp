#include "spdnas/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "spdnas/error.hpp"

namespace spdnas {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kSparsemax:
      return "sparsemax";
    case Activation::kSoftmax:
      return "softmax";
    case Activation::kSigmoid:
      return "sigmoid";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "sparsemax") return Activation::kSparsemax;
  if (s == "softmax") return Activation::kSoftmax;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + s + "' (expected sparsemax, softmax or sigmoid)");
}

Vector sparsemax(const Vector& z) {
  const Eigen::Index n = z.size();
  if (n == 0) throw ContractError("sparsemax: empty input");
  if (!z.allFinite()) throw ContractError("sparsemax: non-finite input");

  // Work on z − max(z): the result then depends only on pairwise differences,
  // which makes sparsemax(z + c·1) bitwise equal to sparsemax(z) whenever the
  // shifted input is itself exactly representable.
  const Vector shifted = z.array() - z.maxCoeff();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return shifted(a) > shifted(b); });

  double cumsum = 0.0;
  double support_sum = 0.0;
  Eigen::Index support = 0;
  for (Eigen::Index k = 1; k <= n; ++k) {
    const double zk = shifted(order[static_cast<std::size_t>(k - 1)]);
    cumsum += zk;
    if (1.0 + static_cast<double>(k) * zk > cumsum) {
      support = k;
      support_sum = cumsum;
    }
  }
  const double tau = (support_sum - 1.0) / static_cast<double>(support);
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = std::max(shifted(i) - tau, 0.0);
  return out;
}

Vector sparsemax_vjp(const Vector& output, const Vector& adjoint) {
  double sum = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < output.size(); ++i) {
    if (output(i) > 0.0) {
      sum += adjoint(i);
      ++count;
    }
  }
  Vector g = Vector::Zero(output.size());
  if (count == 0) return g;
  const double mean = sum / static_cast<double>(count);
  for (Eigen::Index i = 0; i < output.size(); ++i) {
    if (output(i) > 0.0) g(i) = adjoint(i) - mean;
  }
  return g;
}

Vector softmax(const Vector& z) {
  if (z.size() == 0) throw ContractError("softmax: empty input");
  const Vector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

Vector softmax_vjp(const Vector& output, const Vector& adjoint) {
  const double inner = output.dot(adjoint);
  return output.cwiseProduct(adjoint - Vector::Constant(adjoint.size(), inner));
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Vector normalized_sigmoid(const Vector& z) {
  if (z.size() == 0) throw ContractError("normalized_sigmoid: empty input");
  Vector s(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) s(i) = sigmoid(z(i));
  return s / s.sum();
}

Vector normalized_sigmoid_vjp(const Vector& z, const Vector& output, const Vector& adjoint) {
  // y = s / Σs with s = σ(z):  ∂L/∂s_k = (a_k − ⟨a, y⟩) / Σs, then σ′ = s(1 − s).
  Vector s(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) s(i) = sigmoid(z(i));
  const double total = s.sum();
  const double inner = output.dot(adjoint);
  Vector g(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    g(k) = (adjoint(k) - inner) / total * s(k) * (1.0 - s(k));
  }
  return g;
}

Vector activate(Activation a, const Vector& z) {
  switch (a) {
    case Activation::kSparsemax:
      return sparsemax(z);
    case Activation::kSoftmax:
      return softmax(z);
    case Activation::kSigmoid:
      return normalized_sigmoid(z);
  }
  return z;
}

Vector activate_vjp(Activation a, const Vector& z, const Vector& output, const Vector& adjoint) {
  switch (a) {
    case Activation::kSparsemax:
      return sparsemax_vjp(output, adjoint);
    case Activation::kSoftmax:
      return softmax_vjp(output, adjoint);
    case Activation::kSigmoid:
      return normalized_sigmoid_vjp(z, output, adjoint);
  }
  return adjoint;
}

}  // namespace spdnas
