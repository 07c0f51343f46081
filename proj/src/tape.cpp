#include "spdnas/tape.hpp"

#include <string>

#include "spdnas/error.hpp"

namespace spdnas {

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw ContractError("Var: access through an empty handle");
  return tape_->nodes_.at(id_).value;
}

void Adjoints::add(Var parent, const Matrix& contribution) {
  const std::size_t id = parent.id();
  if (!(*needs_)[id]) return;
  Matrix& slot = (*store_)[id];
  if (slot.size() == 0) {
    slot = contribution;
  } else {
    slot += contribution;
  }
}

Matrix Gradients::wrt(Var v) const {
  const std::size_t id = v.id();
  if (id < adjoints_.size() && adjoints_[id].size() != 0) return adjoints_[id];
  if (id < shapes_.size()) return Matrix::Zero(shapes_[id].first, shapes_[id].second);
  return Matrix::Zero(v.rows(), v.cols());
}

bool Gradients::reached(Var v) const {
  return v.id() < adjoints_.size() && adjoints_[v.id()].size() != 0;
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this) throw ContractError("tape: parent belongs to another tape or is empty");
  if (v.id() >= nodes_.size()) {
    throw ContractError("tape: parent " + std::to_string(v.id()) + " is not recorded yet");
  }
}

Var Tape::leaf(Matrix value, bool symmetric) {
  Node n;
  n.tag = "leaf";
  n.value = std::move(value);
  n.symmetric = symmetric;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value, bool symmetric) {
  Node n;
  n.tag = "constant";
  n.value = std::move(value);
  n.symmetric = symmetric;
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view tag, std::span<const Var> parents, Matrix value,
                 BackwardFn backward, bool symmetric, std::shared_ptr<const EigDecomp> eig) {
  Node n;
  n.tag = tag;
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    check_owned(p);
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  n.value = std::move(value);
  n.symmetric = symmetric;
  n.eig = std::move(eig);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
  check_owned(loss);
  if (loss.value().size() != 1) throw ContractError("tape: backward requires a scalar loss");

  Gradients g;
  g.adjoints_.assign(loss.id() + 1, Matrix());
  g.shapes_.reserve(nodes_.size());
  std::vector<bool> needs(loss.id() + 1);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    g.shapes_.emplace_back(nodes_[i].value.rows(), nodes_[i].value.cols());
    if (i <= loss.id()) needs[i] = nodes_[i].requires_grad;
  }
  if (!needs[loss.id()]) return g;

  g.adjoints_[loss.id()] = Matrix::Ones(1, 1);
  Adjoints acc(&g.adjoints_, &needs);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Matrix& adj = g.adjoints_[i];
    if (adj.size() == 0) continue;
    const Node& n = nodes_[i];
    if (n.symmetric) adj = 0.5 * (adj + adj.transpose()).eval();
    if (n.backward) n.backward(adj, acc);
  }
  return g;
}

}  // namespace spdnas
