#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spdnas/manifold.hpp"

namespace spdnas {

enum class ParamKind {
  kStiefel,    // column-orthonormal BiMap weight
  kSpd,        // batch-norm bias
  kEuclidean,  // unconstrained (head, pooling logits)
  kAlpha,      // architecture logits
  kBuffer,     // running statistics, never differentiated
};

std::string to_string(ParamKind k);

struct Param {
  std::string name;
  ParamKind kind;
  Matrix value;
};

// Named tensors addressed by stable indices. Models hold indices, so a copy
// of the store is a full deep clone of the parameters.
class ParamStore {
 public:
  // Returns the index of `name`, creating it from `init` when absent. An
  // existing entry must match in kind and shape (ConfigError otherwise);
  // this is how parameter sharing between cells is expressed.
  std::size_t get_or_add(const std::string& name, ParamKind kind, const Matrix& init);
  std::optional<std::size_t> find(const std::string& name) const;

  Param& operator[](std::size_t i) { return params_.at(i); }
  const Param& operator[](std::size_t i) const { return params_.at(i); }
  std::size_t size() const { return params_.size(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  bool is_weight(std::size_t i) const;
  // Number of learnable reals (everything except buffers; alphas optional).
  std::size_t learnable_count(bool include_alpha) const;

 private:
  std::vector<Param> params_;
};

/// Checkpoint layout (all integers little-endian):
///   "SPDC" | u32 version = 1 | u32 tensor count
///   per tensor: u32 name length | name bytes | u32 rows | u32 cols |
///               rows·cols f64 entries, row-major
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
// Overwrites values of matching names; every stored name must exist with
// the same shape (DataError otherwise).
void load_checkpoint(const std::filesystem::path& path, ParamStore& params);

}  // namespace spdnas
