#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "spdnas/manifold.hpp"

namespace spdnas {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Value of a 1x1 node.
  double scalar() const { return value()(0, 0); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = std::numeric_limits<std::size_t>::max();
};

// Adjoint accumulator handed to backward functions.
class Adjoints {
 public:
  void add(Var parent, const Matrix& contribution);

 private:
  friend class Tape;
  explicit Adjoints(std::vector<Matrix>* store, const std::vector<bool>* needs)
      : store_(store), needs_(needs) {}
  std::vector<Matrix>* store_;
  const std::vector<bool>* needs_;
};

// Receives the (already symmetrized, when the node is symmetric-valued)
// output adjoint and pushes contributions to the parents.
using BackwardFn = std::function<void(const Matrix& adjoint, Adjoints& out)>;

struct Node {
  std::string_view tag;
  std::vector<std::size_t> parents;
  Matrix value;
  bool symmetric = false;
  bool requires_grad = false;
  std::shared_ptr<const EigDecomp> eig;
  BackwardFn backward;
};

// Adjoints for every node reached from the loss.
class Gradients {
 public:
  // Zero matrix of the node's shape when the node was not reached.
  Matrix wrt(Var v) const;
  bool reached(Var v) const;

 private:
  friend class Tape;
  std::vector<Matrix> adjoints_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes_;
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// parents always precede children.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var leaf(Matrix value, bool symmetric = false);
  // Input that never receives an adjoint.
  Var constant(Matrix value, bool symmetric = false);

  /// Appends an operation node. Every parent must already live on this tape;
  /// anything else (a foreign handle, a forward reference) is a
  /// ContractError, which is what keeps the graph acyclic.
  Var record(std::string_view tag, std::span<const Var> parents, Matrix value, BackwardFn backward,
             bool symmetric = false, std::shared_ptr<const EigDecomp> eig = nullptr);
  Var record(std::string_view tag, std::initializer_list<Var> parents, Matrix value,
             BackwardFn backward, bool symmetric = false,
             std::shared_ptr<const EigDecomp> eig = nullptr) {
    return record(tag, std::span<const Var>(parents.begin(), parents.size()), std::move(value),
                  std::move(backward), symmetric, std::move(eig));
  }

  // Reverse sweep from a 1x1 node.
  Gradients backward(Var loss) const;

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Node& node(Var v) const { return node(v.id()); }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  void check_owned(Var v) const;

  std::vector<Node> nodes_;
};

}  // namespace spdnas
