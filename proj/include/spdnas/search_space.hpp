#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spdnas/layers.hpp"
#include "spdnas/params.hpp"
#include "spdnas/rng.hpp"
#include "spdnas/simplex.hpp"

namespace spdnas {

enum class OpTag {
  kBiMap0,  // BiMap → BatchNorm
  kBiMap1,  // BiMap → BatchNorm → ReEig
  kBiMap2,  // ReEig → BiMap → BatchNorm
  kSkipNormal,
  kNoneNormal,
  kWeightedPooling,
  kAvgPoolReduced,
  kMaxPoolReduced,
  kSkipReduced,
};

std::string to_string(OpTag t);
OpTag op_tag_from_string(const std::string& s);

enum class CellKind { kNormal, kReduction };

std::string to_string(CellKind k);
CellKind cell_kind_from_string(const std::string& s);

// Candidates on an edge leaving node `pred`. Only edges out of the two input
// nodes of a reduction cell change dimension, so only they use the reduction
// catalogue. The order doubles as the tie-break order.
std::span<const OpTag> candidates(CellKind kind, int pred);

struct EdgeId {
  int pred;
  int node;
};

// Every i < j with j an intermediate node, ordered by j then i.
std::vector<EdgeId> cell_edges(int nodes);
int intermediate_count(int nodes);

// Kernel used by the pooling reductions n → m: 4 when that still leaves at
// least m rows, else 2.
int pool_kernel(Eigen::Index n, Eigen::Index m);
Eigen::Index pooled_dim(Eigen::Index n, int kernel);

struct CellConfig {
  CellKind kind = CellKind::kNormal;
  // Dimension after the preprocessing BiMap; 0 keeps the incoming dimension.
  Eigen::Index in_dim = 0;
  Eigen::Index out_dim = 0;
};

struct ModelConfig {
  Eigen::Index input_dim = 20;
  int classes = 3;
  // Lanes per node; the raw input is replicated to this width.
  int channels = 1;
  int nodes = 5;
  std::vector<CellConfig> cells = {{CellKind::kReduction, 0, 10}, {CellKind::kNormal, 0, 10}};
  // Same-kind cells reuse op parameters (α is always shared per kind).
  bool share_op_params = false;
  double reeig_epsilon = 1e-4;
  double bn_momentum = 0.9;

  // Reports every problem at once through a single ConfigError.
  void validate() const;
  std::vector<std::string> problems() const;
  // Resolved (in, out) dimensions per cell.
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cell_dims() const;
  // Lanes entering each cell; the output of a cell has intermediate_count
  // times as many.
  std::vector<int> cell_lanes() const;
};

struct GenotypeEdge {
  int pred;
  OpTag op;
};

struct GenotypeCell {
  CellKind kind;
  // One list per intermediate node, sorted by predecessor.
  std::vector<std::vector<GenotypeEdge>> nodes;
};

struct Genotype {
  // One entry per cell kind that occurs in the model.
  std::vector<GenotypeCell> cells;
  ModelConfig model;

  const GenotypeCell& cell(CellKind kind) const;
};

std::string genotype_to_json(const Genotype& g);
Genotype genotype_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const std::string& text);

std::string export_dot(const Genotype& g);

struct ParamReport {
  std::size_t count = 0;
  double megabytes = 0.0;
};
// All learnable reals; megabytes use 4-byte storage per real.
ParamReport param_report(const ParamStore& params);

/// Per edge: activation, None masked out, best op by weight (ties to the
/// earlier catalogue entry). Per node: the k predecessors with the largest
/// best-op weight (ties to the lower predecessor index).
Genotype derive_genotype(const ParamStore& params, const ModelConfig& model, Activation act, int k);
// Same rule on explicit logits, one column per edge.
GenotypeCell derive_cell(CellKind kind, int nodes, const std::vector<Vector>& edge_logits,
                         Activation act, int k);

// Smallest eigenvalue seen by a forward pass, tracked when enabled.
struct SpdMonitor {
  bool enabled = false;
  double min_eig = std::numeric_limits<double>::infinity();
  double min_after_reeig = std::numeric_limits<double>::infinity();
  std::size_t checked = 0;

  void observe(const Matrix& x);
  void observe_rectified(const Matrix& x);
};

// One forward pass: owns the leaf handles for the parameters it touched.
class ForwardContext {
 public:
  ForwardContext(Tape& tape, ParamStore& params, NormMode mode, WfmConfig wfm = {})
      : tape_(tape), params_(params), mode_(mode), wfm_(wfm), leaves_(params.size()) {}

  Tape& tape() { return tape_; }
  ParamStore& params() { return params_; }
  NormMode mode() const { return mode_; }
  const WfmConfig& wfm() const { return wfm_; }
  SpdMonitor& monitor() { return monitor_; }

  // Differentiable handle for a weight or α parameter, created on first use.
  Var param(std::size_t index);
  // Uses an existing leaf for a parameter (finite-difference harnesses).
  void bind(std::size_t index, Var leaf);
  // Euclidean gradient per store entry; zeros for untouched entries.
  std::vector<Matrix> gradients(const Gradients& g) const;

 private:
  Tape& tape_;
  ParamStore& params_;
  NormMode mode_;
  WfmConfig wfm_;
  SpdMonitor monitor_;
  std::vector<Var> leaves_;
};

// [sample][lane]
using BatchValue = std::vector<std::vector<Var>>;

struct OpInstance {
  OpTag tag = OpTag::kSkipNormal;
  Eigen::Index in_dim = 0;
  Eigen::Index out_dim = 0;
  int kernel = 0;
  double reeig_epsilon = 1e-4;
  double bn_momentum = 0.9;
  // Per lane: BiMap variants {W, G, running}; skip-reduced {W1, W2};
  // pooling-reduced {W} when a dimension fix-up is needed.
  std::vector<std::vector<std::size_t>> lane_params;
  // Weighted pooling: lanes×lanes logits stored as one column.
  std::optional<std::size_t> pool_logits;

  BatchValue apply(ForwardContext& ctx, const BatchValue& in) const;
};

struct EdgeSlot {
  EdgeId id;
  // Search edges carry the full catalogue and an α index; discrete edges a
  // single op.
  std::vector<OpInstance> ops;
  std::optional<std::size_t> alpha;
};

struct CellInstance {
  CellKind kind;
  Eigen::Index in_dim;
  Eigen::Index out_dim;
  int lanes;
  int nodes;
  OpInstance prep0;
  OpInstance prep1;
  std::vector<EdgeSlot> edges;
};

// Which search edges take part in a forward pass, per cell; empty = all.
using EdgeMasks = std::vector<std::vector<bool>>;

class Network {
 public:
  // Registers parameters in `params` (get-or-add by name) and draws fresh
  // Stiefel initializations from `init` for new entries.
  static Network supernet(const ModelConfig& model, ParamStore& params, Rng& init,
                          Activation act = Activation::kSparsemax);
  static Network discrete(const Genotype& genotype, ParamStore& params, Rng& init);

  // Per-sample logits (classes×1).
  std::vector<Var> forward(ForwardContext& ctx, std::span<const Matrix> batch,
                           const EdgeMasks* masks = nullptr) const;
  // Output lanes of the last cell, before the head.
  BatchValue features(ForwardContext& ctx, std::span<const Matrix> batch,
                      const EdgeMasks* masks = nullptr) const;

  // Masks that keep exactly the edges named by the genotype.
  EdgeMasks masks_for(const Genotype& g) const;

  const ModelConfig& model() const { return model_; }
  bool is_supernet() const { return supernet_; }
  Activation activation() const { return act_; }
  const std::vector<CellInstance>& cells() const { return cells_; }
  std::span<const std::size_t> head() const { return head_; }

 private:
  BatchValue cell_forward(ForwardContext& ctx, const CellInstance& cell, const BatchValue& in,
                          const std::vector<bool>* mask) const;

  ModelConfig model_;
  bool supernet_ = false;
  Activation act_ = Activation::kSparsemax;
  std::vector<CellInstance> cells_;
  std::vector<std::size_t> head_;  // {W, b}
};

/// Mixture of candidate outputs under simplex weights `w`: candidates with
/// weight exactly zero are skipped, a single survivor is returned as is,
/// otherwise the lane-wise weighted Fréchet mean.
BatchValue mix_candidates(ForwardContext& ctx, Var w, std::span<const OpInstance> ops,
                          const BatchValue& in);
// Lane-wise unweighted barycenter of edge outputs.
BatchValue aggregate_node(ForwardContext& ctx, std::span<const BatchValue> edge_outputs);

// Mean cross-entropy over the batch and the number of correct argmax
// predictions.
struct LossValue {
  Var loss;
  std::size_t correct = 0;
};
LossValue batch_loss(std::span<const Var> logits, std::span<const int> labels);

}  // namespace spdnas
