#include "spdnas/search_space.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "spdnas/error.hpp"
#include "spdnas/stiefel.hpp"

namespace spdnas {

using json = nlohmann::ordered_json;

namespace {

constexpr std::array<OpTag, 6> kNormalCatalogue = {
    OpTag::kBiMap0,     OpTag::kBiMap1,     OpTag::kBiMap2,
    OpTag::kSkipNormal, OpTag::kNoneNormal, OpTag::kWeightedPooling,
};

constexpr std::array<OpTag, 7> kReductionCatalogue = {
    OpTag::kBiMap0,         OpTag::kBiMap1,         OpTag::kBiMap2,      OpTag::kAvgPoolReduced,
    OpTag::kMaxPoolReduced, OpTag::kSkipReduced,    OpTag::kNoneNormal,
};

constexpr std::array<std::pair<OpTag, const char*>, 9> kOpNames = {{
    {OpTag::kBiMap0, "BiMap_0"},
    {OpTag::kBiMap1, "BiMap_1"},
    {OpTag::kBiMap2, "BiMap_2"},
    {OpTag::kSkipNormal, "Skip_normal"},
    {OpTag::kNoneNormal, "None_normal"},
    {OpTag::kWeightedPooling, "WeightedRiemannPooling_normal"},
    {OpTag::kAvgPoolReduced, "AveragePooling_reduced"},
    {OpTag::kMaxPoolReduced, "MaxPooling_reduced"},
    {OpTag::kSkipReduced, "Skip_reduced"},
}};

bool is_bimap(OpTag t) {
  return t == OpTag::kBiMap0 || t == OpTag::kBiMap1 || t == OpTag::kBiMap2;
}

std::string dim_str(Eigen::Index n) { return std::to_string(n); }

Eigen::Index ceil_div(Eigen::Index n, Eigen::Index k) { return (n + k - 1) / k; }

// Builds parameters for one network; each Stiefel weight is drawn from its
// own name-keyed stream so a discrete model and the supernet it came from
// initialize shared names identically.
class Builder {
 public:
  Builder(ParamStore& params, std::uint64_t seed, const ModelConfig& model)
      : params_(params), seed_(seed), model_(model) {}

  std::size_t stiefel(const std::string& name, Eigen::Index n, Eigen::Index m) {
    if (auto idx = params_.find(name)) return params_.get_or_add(name, ParamKind::kStiefel, Matrix(n, m));
    Rng rng = substream(seed_, name);
    return params_.get_or_add(name, ParamKind::kStiefel, random_stiefel(n, m, rng));
  }

  std::size_t spd_identity(const std::string& name, Eigen::Index n, ParamKind kind) {
    return params_.get_or_add(name, kind, Matrix::Identity(n, n));
  }

  std::size_t zeros(const std::string& name, Eigen::Index r, Eigen::Index c, ParamKind kind) {
    return params_.get_or_add(name, kind, Matrix::Zero(r, c));
  }

  OpInstance op(OpTag tag, Eigen::Index in, Eigen::Index out, int lanes, const std::string& prefix) {
    OpInstance o;
    o.tag = tag;
    o.in_dim = in;
    o.out_dim = out;
    o.reeig_epsilon = model_.reeig_epsilon;
    o.bn_momentum = model_.bn_momentum;
    o.lane_params.resize(static_cast<std::size_t>(lanes));
    const std::string base = prefix + "." + to_string(tag);
    for (int c = 0; c < lanes; ++c) {
      const std::string p = base + ".c" + std::to_string(c);
      auto& lp = o.lane_params[static_cast<std::size_t>(c)];
      if (is_bimap(tag)) {
        lp.push_back(stiefel(p + ".W", in, out));
        lp.push_back(spd_identity(p + ".bias", out, ParamKind::kSpd));
        lp.push_back(spd_identity(p + ".running_mean", out, ParamKind::kBuffer));
      } else if (tag == OpTag::kSkipReduced) {
        lp.push_back(stiefel(p + ".W1", in, out / 2));
        lp.push_back(stiefel(p + ".W2", in, out / 2));
      } else if (tag == OpTag::kAvgPoolReduced || tag == OpTag::kMaxPoolReduced) {
        o.kernel = pool_kernel(in, out);
        const Eigen::Index pooled = pooled_dim(in, o.kernel);
        if (pooled != out) lp.push_back(stiefel(p + ".W", pooled, out));
      }
    }
    if (tag == OpTag::kWeightedPooling) {
      // Lane count in the name: shared cells of one kind see different widths.
      o.pool_logits = zeros(base + ".logits" + std::to_string(lanes), static_cast<Eigen::Index>(lanes) * lanes, 1,
                            ParamKind::kEuclidean);
    }
    return o;
  }

 private:
  ParamStore& params_;
  std::uint64_t seed_;
  const ModelConfig& model_;
};

std::string cell_prefix(const ModelConfig& m, std::size_t ci) {
  if (m.share_op_params) return "shared." + to_string(m.cells[ci].kind);
  return "cell" + std::to_string(ci);
}

std::string alpha_name(CellKind kind, std::size_t edge) {
  return "alpha." + to_string(kind) + ".edge" + std::to_string(edge);
}

std::string edge_prefix(const std::string& cell, const EdgeId& e) {
  return cell + ".n" + std::to_string(e.node) + ".p" + std::to_string(e.pred);
}

}  // namespace

std::string to_string(OpTag t) {
  for (const auto& [tag, name] : kOpNames) {
    if (tag == t) return name;
  }
  return "?";
}

OpTag op_tag_from_string(const std::string& s) {
  for (const auto& [tag, name] : kOpNames) {
    if (s == name) return tag;
  }
  throw ConfigError("unknown operation '" + s + "'");
}

std::string to_string(CellKind k) { return k == CellKind::kNormal ? "normal" : "reduction"; }

CellKind cell_kind_from_string(const std::string& s) {
  if (s == "normal") return CellKind::kNormal;
  if (s == "reduction") return CellKind::kReduction;
  throw ConfigError("unknown cell kind '" + s + "' (expected normal or reduction)");
}

std::span<const OpTag> candidates(CellKind kind, int pred) {
  if (kind == CellKind::kReduction && pred < 2) return kReductionCatalogue;
  return kNormalCatalogue;
}

std::vector<EdgeId> cell_edges(int nodes) {
  std::vector<EdgeId> out;
  for (int j = 2; j <= nodes - 2; ++j) {
    for (int i = 0; i < j; ++i) out.push_back({i, j});
  }
  return out;
}

int intermediate_count(int nodes) { return std::max(nodes - 3, 0); }

int pool_kernel(Eigen::Index n, Eigen::Index m) { return ceil_div(n, 4) >= m ? 4 : 2; }

Eigen::Index pooled_dim(Eigen::Index n, int kernel) { return ceil_div(n, kernel); }

// ---------------------------------------------------------------- config

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> p;
  if (input_dim < 2) p.push_back("input_dim must be at least 2, got " + dim_str(input_dim));
  if (classes < 2) p.push_back("classes must be at least 2, got " + std::to_string(classes));
  if (channels < 1) p.push_back("channels must be positive, got " + std::to_string(channels));
  if (nodes < 4) p.push_back("nodes must be at least 4 (two inputs, one intermediate, one output), got " +
                             std::to_string(nodes));
  if (!(reeig_epsilon > 0.0)) p.push_back("reeig_epsilon must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) p.push_back("bn_momentum must lie in [0, 1]");
  if (cells.empty()) p.push_back("cells must not be empty");
  Eigen::Index prev = input_dim;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellConfig& c = cells[i];
    const std::string where = "cells[" + std::to_string(i) + "] (" + to_string(c.kind) + "): ";
    const Eigen::Index in = c.in_dim == 0 ? prev : c.in_dim;
    if (in < 1 || in > prev) {
      p.push_back(where + "in_dim " + dim_str(in) + " cannot be reached from incoming dimension " +
                  dim_str(prev));
    }
    Eigen::Index out = c.out_dim == 0 ? in : c.out_dim;
    if (c.kind == CellKind::kNormal) {
      if (out != in) {
        p.push_back(where + "a normal cell keeps its dimension, in_dim " + dim_str(in) +
                    " vs out_dim " + dim_str(out));
      }
    } else {
      if (out > ceil_div(in, 2)) {
        p.push_back(where + "out_dim " + dim_str(out) + " must be at most half of in_dim " + dim_str(in));
      }
      if (out < 2 || out % 2 != 0) {
        p.push_back(where + "out_dim " + dim_str(out) + " must be even and at least 2 (Skip_reduced splits it)");
      }
    }
    prev = out;
  }
  return p;
}

void ModelConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid model configuration:";
  for (const auto& s : p) msg += "\n  - " + s;
  throw ConfigError(msg);
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> ModelConfig::cell_dims() const {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  Eigen::Index prev = input_dim;
  for (const CellConfig& c : cells) {
    const Eigen::Index in = c.in_dim == 0 ? prev : c.in_dim;
    const Eigen::Index o = c.out_dim == 0 ? in : c.out_dim;
    out.emplace_back(in, o);
    prev = o;
  }
  return out;
}

std::vector<int> ModelConfig::cell_lanes() const {
  std::vector<int> out;
  int lanes = channels;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    out.push_back(lanes);
    lanes *= intermediate_count(nodes);
  }
  return out;
}

// ---------------------------------------------------------------- json

namespace {

json model_json(const ModelConfig& m) {
  json cells = json::array();
  for (const CellConfig& c : m.cells) {
    cells.push_back({{"kind", to_string(c.kind)}, {"in_dim", c.in_dim}, {"out_dim", c.out_dim}});
  }
  return {{"input_dim", m.input_dim},         {"classes", m.classes},
          {"channels", m.channels},           {"nodes", m.nodes},
          {"cells", cells},                   {"share_op_params", m.share_op_params},
          {"reeig_epsilon", m.reeig_epsilon}, {"bn_momentum", m.bn_momentum}};
}

ModelConfig model_from(const json& j) {
  if (!j.is_object()) throw ConfigError("model configuration must be a JSON object");
  ModelConfig m;
  try {
    m.input_dim = j.value("input_dim", m.input_dim);
    m.classes = j.value("classes", m.classes);
    m.channels = j.value("channels", m.channels);
    m.nodes = j.value("nodes", m.nodes);
    m.share_op_params = j.value("share_op_params", m.share_op_params);
    m.reeig_epsilon = j.value("reeig_epsilon", m.reeig_epsilon);
    m.bn_momentum = j.value("bn_momentum", m.bn_momentum);
    if (j.contains("cells")) {
      m.cells.clear();
      for (const json& c : j.at("cells")) {
        CellConfig cc;
        cc.kind = cell_kind_from_string(c.at("kind").get<std::string>());
        cc.in_dim = c.value("in_dim", Eigen::Index{0});
        cc.out_dim = c.value("out_dim", Eigen::Index{0});
        m.cells.push_back(cc);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model configuration: ") + e.what());
  }
  return m;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& m) { return model_json(m).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model configuration is not valid JSON: ") + e.what());
  }
  return model_from(j);
}

const GenotypeCell& Genotype::cell(CellKind kind) const {
  for (const GenotypeCell& c : cells) {
    if (c.kind == kind) return c;
  }
  throw ConfigError("genotype has no " + to_string(kind) + " cell");
}

std::string genotype_to_json(const Genotype& g) {
  json cells = json::array();
  for (const GenotypeCell& c : g.cells) {
    json nodes = json::array();
    for (const auto& node : c.nodes) {
      json entries = json::array();
      for (const GenotypeEdge& e : node) entries.push_back({{"pred", e.pred}, {"op", to_string(e.op)}});
      nodes.push_back(entries);
    }
    cells.push_back({{"kind", to_string(c.kind)}, {"nodes", nodes}});
  }
  return json{{"cells", cells}, {"dims", model_json(g.model)}}.dump(2) + "\n";
}

Genotype genotype_from_json(const std::string& text) {
  Genotype g;
  try {
    const json j = json::parse(text);
    g.model = model_from(j.at("dims"));
    for (const json& c : j.at("cells")) {
      GenotypeCell cell{cell_kind_from_string(c.at("kind").get<std::string>()), {}};
      for (const json& node : c.at("nodes")) {
        std::vector<GenotypeEdge> entries;
        for (const json& e : node) {
          entries.push_back({e.at("pred").get<int>(), op_tag_from_string(e.at("op").get<std::string>())});
        }
        cell.nodes.push_back(std::move(entries));
      }
      g.cells.push_back(std::move(cell));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("genotype: ") + e.what());
  }
  return g;
}

std::string export_dot(const Genotype& g) {
  std::ostringstream os;
  os << "digraph genotype {\n  rankdir=LR;\n  node [shape=box];\n";
  for (std::size_t ci = 0; ci < g.cells.size(); ++ci) {
    const GenotypeCell& c = g.cells[ci];
    const std::string k = to_string(c.kind);
    auto name = [&](int i) { return "\"" + k + "_" + std::to_string(i) + "\""; };
    const int inter = static_cast<int>(c.nodes.size());
    const int out = inter + 2;
    os << "  subgraph cluster_" << ci << " {\n    label=\"" << k << "\";\n";
    os << "    " << name(0) << " [label=\"in_0\"];\n";
    os << "    " << name(1) << " [label=\"in_1\"];\n";
    for (int j = 0; j < inter; ++j) os << "    " << name(j + 2) << " [label=\"" << j + 2 << "\"];\n";
    os << "    " << name(out) << " [label=\"out\"];\n";
    for (int j = 0; j < inter; ++j) {
      for (const GenotypeEdge& e : c.nodes[static_cast<std::size_t>(j)]) {
        os << "    " << name(e.pred) << " -> " << name(j + 2) << " [label=\"" << to_string(e.op) << "\"];\n";
      }
      os << "    " << name(j + 2) << " -> " << name(out) << " [style=dashed];\n";
    }
    os << "  }\n";
  }
  os << "}\n";
  return os.str();
}

ParamReport param_report(const ParamStore& params) {
  ParamReport r;
  r.count = params.learnable_count(true);
  r.megabytes = static_cast<double>(r.count) * 4.0 / (1024.0 * 1024.0);
  return r;
}

// ---------------------------------------------------------------- derivation

GenotypeCell derive_cell(CellKind kind, int nodes, const std::vector<Vector>& edge_logits,
                         Activation act, int k) {
  const std::vector<EdgeId> edges = cell_edges(nodes);
  if (edge_logits.size() != edges.size()) {
    throw ShapeError("derive_cell: " + std::to_string(edge_logits.size()) + " logit columns for " +
                     std::to_string(edges.size()) + " edges");
  }
  struct Best {
    int pred;
    OpTag op;
    double weight;
  };
  std::vector<std::vector<Best>> per_node(static_cast<std::size_t>(intermediate_count(nodes)));
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto cands = candidates(kind, edges[e].pred);
    if (edge_logits[e].size() != static_cast<Eigen::Index>(cands.size())) {
      throw ShapeError("derive_cell: edge " + std::to_string(e) + " has " +
                       std::to_string(edge_logits[e].size()) + " logits for " +
                       std::to_string(cands.size()) + " candidates");
    }
    if (!edge_logits[e].allFinite()) throw ContractError("derive_cell: non-finite logits on edge " + std::to_string(e));
    const Vector w = activate(act, edge_logits[e]);
    Best b{edges[e].pred, OpTag::kNoneNormal, -1.0};
    for (std::size_t c = 0; c < cands.size(); ++c) {
      if (cands[c] == OpTag::kNoneNormal) continue;
      if (w(static_cast<Eigen::Index>(c)) > b.weight) b = {edges[e].pred, cands[c], w(static_cast<Eigen::Index>(c))};
    }
    per_node[static_cast<std::size_t>(edges[e].node - 2)].push_back(b);
  }
  GenotypeCell cell{kind, {}};
  for (std::size_t j = 0; j < per_node.size(); ++j) {
    auto& preds = per_node[j];
    if (static_cast<int>(preds.size()) < k) {
      throw ContractError("derive_genotype: node " + std::to_string(j + 2) + " has " +
                          std::to_string(preds.size()) + " predecessors, fewer than k = " + std::to_string(k));
    }
    std::stable_sort(preds.begin(), preds.end(), [](const Best& a, const Best& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return a.pred < b.pred;
    });
    preds.resize(static_cast<std::size_t>(k));
    std::sort(preds.begin(), preds.end(), [](const Best& a, const Best& b) { return a.pred < b.pred; });
    std::vector<GenotypeEdge> entries;
    for (const Best& b : preds) entries.push_back({b.pred, b.op});
    cell.nodes.push_back(std::move(entries));
  }
  return cell;
}

Genotype derive_genotype(const ParamStore& params, const ModelConfig& model, Activation act, int k) {
  if (k < 1) throw ContractError("derive_genotype: k must be positive");
  Genotype g;
  g.model = model;
  const std::size_t ne = cell_edges(model.nodes).size();
  for (const CellConfig& c : model.cells) {
    const bool seen = std::any_of(g.cells.begin(), g.cells.end(),
                                  [&](const GenotypeCell& x) { return x.kind == c.kind; });
    if (seen) continue;
    std::vector<Vector> logits;
    for (std::size_t e = 0; e < ne; ++e) {
      const auto idx = params.find(alpha_name(c.kind, e));
      if (!idx) throw ContractError("derive_genotype: missing " + alpha_name(c.kind, e));
      logits.push_back(params[*idx].value.col(0));
    }
    g.cells.push_back(derive_cell(c.kind, model.nodes, logits, act, k));
  }
  return g;
}

// ---------------------------------------------------------------- forward

void SpdMonitor::observe(const Matrix& x) {
  if (!enabled) return;
  const double m = sym_eig(symmetrize(x)).values.minCoeff();
  min_eig = std::min(min_eig, m);
  ++checked;
}

void SpdMonitor::observe_rectified(const Matrix& x) {
  if (!enabled) return;
  const double m = sym_eig(symmetrize(x)).values.minCoeff();
  min_eig = std::min(min_eig, m);
  min_after_reeig = std::min(min_after_reeig, m);
  ++checked;
}

Var ForwardContext::param(std::size_t index) {
  if (index >= leaves_.size()) throw ContractError("ForwardContext: parameter index out of range");
  Var& v = leaves_[index];
  if (!v.valid()) {
    const Param& p = params_[index];
    if (p.kind == ParamKind::kBuffer) throw ContractError("ForwardContext: buffer '" + p.name + "' is not differentiable");
    v = tape_.leaf(p.value, p.kind == ParamKind::kSpd);
  }
  return v;
}

void ForwardContext::bind(std::size_t index, Var leaf) {
  if (index >= leaves_.size()) throw ContractError("ForwardContext: parameter index out of range");
  if (leaf.tape() != &tape_) throw ContractError("ForwardContext: leaf lives on another tape");
  leaves_[index] = leaf;
}

std::vector<Matrix> ForwardContext::gradients(const Gradients& g) const {
  std::vector<Matrix> out(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const Matrix& v = params_[i].value;
    out[i] = leaves_[i].valid() ? g.wrt(leaves_[i]) : Matrix::Zero(v.rows(), v.cols());
  }
  return out;
}

BatchValue OpInstance::apply(ForwardContext& ctx, const BatchValue& in) const {
  if (in.empty()) throw ContractError("operation " + to_string(tag) + ": empty batch");
  const std::size_t batch = in.size();
  const std::size_t lanes = in[0].size();
  for (const auto& s : in) {
    if (s.size() != lanes) throw ShapeError("operation " + to_string(tag) + ": ragged lane counts");
    for (const Var& x : s) {
      if (x.rows() != in_dim) {
        throw ShapeError("operation " + to_string(tag) + " expects " + dim_str(in_dim) + "x" +
                         dim_str(in_dim) + " input, got " + dim_str(x.rows()) + "x" + dim_str(x.cols()));
      }
    }
  }
  if (tag != OpTag::kWeightedPooling && lane_params.size() != lanes) {
    throw ShapeError("operation " + to_string(tag) + " built for " + std::to_string(lane_params.size()) +
                     " lanes, got " + std::to_string(lanes));
  }

  BatchValue out(batch, std::vector<Var>(lanes));
  SpdMonitor& mon = ctx.monitor();
  switch (tag) {
    case OpTag::kBiMap0:
    case OpTag::kBiMap1:
    case OpTag::kBiMap2: {
      for (std::size_t c = 0; c < lanes; ++c) {
        const auto& lp = lane_params[c];
        const Var w = ctx.param(lp[0]);
        const Var g = ctx.param(lp[1]);
        Matrix& running = ctx.params()[lp[2]].value;
        std::vector<Var> xs(batch);
        for (std::size_t s = 0; s < batch; ++s) {
          Var x = in[s][c];
          if (tag == OpTag::kBiMap2) {
            x = layer::reeig(x, reeig_epsilon);
            mon.observe_rectified(x.value());
          }
          xs[s] = layer::bimap(x, w);
        }
        std::vector<Var> ys = layer::batchnorm(xs, g, running, bn_momentum, ctx.mode(), ctx.wfm());
        for (std::size_t s = 0; s < batch; ++s) {
          if (tag == OpTag::kBiMap1) {
            ys[s] = layer::reeig(ys[s], reeig_epsilon);
            mon.observe_rectified(ys[s].value());
          }
          out[s][c] = ys[s];
        }
      }
      break;
    }
    case OpTag::kSkipNormal:
      out = in;
      break;
    case OpTag::kNoneNormal: {
      const Var id = layer::none(ctx.tape(), out_dim);
      for (auto& s : out) std::fill(s.begin(), s.end(), id);
      break;
    }
    case OpTag::kWeightedPooling: {
      const Var logits = ctx.param(*pool_logits);
      if (logits.rows() != static_cast<Eigen::Index>(lanes * lanes)) {
        throw ShapeError("WeightedRiemannPooling_normal built for a different lane count");
      }
      std::vector<Var> rows;
      for (std::size_t r = 0; r < lanes; ++r) {
        std::vector<Eigen::Index> idx(lanes);
        for (std::size_t c = 0; c < lanes; ++c) idx[c] = static_cast<Eigen::Index>(r * lanes + c);
        rows.push_back(op::activation(op::gather(logits, idx), Activation::kSoftmax));
      }
      for (std::size_t s = 0; s < batch; ++s) out[s] = layer::weighted_riem_pooling(in[s], rows, ctx.wfm());
      break;
    }
    case OpTag::kAvgPoolReduced:
    case OpTag::kMaxPoolReduced: {
      const auto kind = tag == OpTag::kAvgPoolReduced ? op::PoolKind::kAverage : op::PoolKind::kMax;
      for (std::size_t c = 0; c < lanes; ++c) {
        const auto& lp = lane_params[c];
        for (std::size_t s = 0; s < batch; ++s) {
          Var y = layer::reduced_pool(in[s][c], kernel, kind);
          if (!lp.empty()) y = layer::bimap(y, ctx.param(lp[0]));
          out[s][c] = y;
        }
      }
      break;
    }
    case OpTag::kSkipReduced: {
      for (std::size_t c = 0; c < lanes; ++c) {
        const Var w1 = ctx.param(lane_params[c][0]);
        const Var w2 = ctx.param(lane_params[c][1]);
        for (std::size_t s = 0; s < batch; ++s) out[s][c] = layer::skip_reduced(in[s][c], w1, w2);
      }
      break;
    }
  }
  for (const auto& s : out) {
    for (const Var& y : s) {
      if (y.rows() != out_dim) {
        throw ShapeError("operation " + to_string(tag) + " produced " + dim_str(y.rows()) + "x" +
                         dim_str(y.cols()) + ", expected " + dim_str(out_dim) + "x" + dim_str(out_dim));
      }
      if (tag != OpTag::kSkipNormal) mon.observe(y.value());
    }
  }
  return out;
}

BatchValue mix_candidates(ForwardContext& ctx, Var w, std::span<const OpInstance> ops,
                          const BatchValue& in) {
  if (w.rows() != static_cast<Eigen::Index>(ops.size()) || w.cols() != 1) {
    throw ShapeError("mixed edge: " + std::to_string(w.rows()) + " weights for " + std::to_string(ops.size()) +
                     " candidates");
  }
  std::vector<Eigen::Index> active;
  for (Eigen::Index k = 0; k < w.rows(); ++k) {
    if (w.value()(k, 0) != 0.0) active.push_back(k);
  }
  if (active.empty()) throw NumericError("mixed edge: all candidate weights are zero");
  if (active.size() == 1) return ops[static_cast<std::size_t>(active[0])].apply(ctx, in);

  std::vector<BatchValue> outs;
  outs.reserve(active.size());
  for (Eigen::Index k : active) outs.push_back(ops[static_cast<std::size_t>(k)].apply(ctx, in));
  const Var wa = active.size() == ops.size() ? w : op::gather(w, active);

  const std::size_t batch = in.size();
  const std::size_t lanes = outs[0][0].size();
  BatchValue out(batch, std::vector<Var>(lanes));
  std::vector<Var> pts(active.size());
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t c = 0; c < lanes; ++c) {
      for (std::size_t k = 0; k < active.size(); ++k) pts[k] = outs[k][s][c];
      out[s][c] = weighted_frechet_mean(pts, wa, ctx.wfm()).mean;
      ctx.monitor().observe(out[s][c].value());
    }
  }
  return out;
}

BatchValue aggregate_node(ForwardContext& ctx, std::span<const BatchValue> edge_outputs) {
  if (edge_outputs.empty()) throw ContractError("node aggregation: no incoming edges");
  const std::size_t batch = edge_outputs[0].size();
  const std::size_t lanes = batch == 0 ? 0 : edge_outputs[0][0].size();
  for (const BatchValue& e : edge_outputs) {
    if (e.size() != batch || (batch > 0 && e[0].size() != lanes)) {
      throw ShapeError("node aggregation: edge outputs disagree in batch or channel count");
    }
  }
  if (edge_outputs.size() == 1) return edge_outputs[0];
  BatchValue out(batch, std::vector<Var>(lanes));
  std::vector<Var> pts(edge_outputs.size());
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t c = 0; c < lanes; ++c) {
      for (std::size_t e = 0; e < edge_outputs.size(); ++e) pts[e] = edge_outputs[e][s][c];
      out[s][c] = barycenter(pts, ctx.wfm()).mean;
      ctx.monitor().observe(out[s][c].value());
    }
  }
  return out;
}

// ---------------------------------------------------------------- network

namespace {

std::uint64_t draw_seed(Rng& init) { return init(); }

CellInstance make_cell_shell(Builder& b, const ModelConfig& model, std::size_t ci, Eigen::Index prev_dim,
                             Eigen::Index in, Eigen::Index out, int lanes) {
  const std::string prefix = cell_prefix(model, ci);
  CellInstance cell{model.cells[ci].kind, in, out, lanes, model.nodes, {}, {}, {}};
  cell.prep0 = b.op(OpTag::kBiMap2, prev_dim, in, lanes, prefix + ".prep0");
  cell.prep1 = b.op(OpTag::kBiMap2, prev_dim, in, lanes, prefix + ".prep1");
  return cell;
}

std::vector<std::size_t> make_head(Builder& b, const ModelConfig& model) {
  const auto dims = model.cell_dims();
  const auto lanes = model.cell_lanes();
  const Eigen::Index d = dims.back().second;
  const Eigen::Index feats = static_cast<Eigen::Index>(lanes.back()) * intermediate_count(model.nodes) *
                             d * (d + 1) / 2;
  return {b.zeros("head.W", model.classes, feats, ParamKind::kEuclidean),
          b.zeros("head.b", model.classes, 1, ParamKind::kEuclidean)};
}

Eigen::Index prev_dim_of(const ModelConfig& model, std::size_t ci) {
  return ci == 0 ? model.input_dim : model.cell_dims()[ci - 1].second;
}

}  // namespace

Network Network::supernet(const ModelConfig& model, ParamStore& params, Rng& init, Activation act) {
  model.validate();
  Network net;
  net.model_ = model;
  net.supernet_ = true;
  net.act_ = act;
  Builder b(params, draw_seed(init), model);
  const auto dims = model.cell_dims();
  const auto lanes = model.cell_lanes();
  const auto edges = cell_edges(model.nodes);
  for (std::size_t ci = 0; ci < model.cells.size(); ++ci) {
    const auto [in, out] = dims[ci];
    CellInstance cell = make_cell_shell(b, model, ci, prev_dim_of(model, ci), in, out, lanes[ci]);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const EdgeId id = edges[e];
      const auto cands = candidates(cell.kind, id.pred);
      const Eigen::Index from = id.pred < 2 ? in : out;
      EdgeSlot slot{id, {}, {}};
      for (OpTag t : cands) {
        slot.ops.push_back(b.op(t, from, out, lanes[ci], edge_prefix(cell_prefix(model, ci), id)));
      }
      slot.alpha = b.zeros(alpha_name(cell.kind, e), static_cast<Eigen::Index>(cands.size()), 1, ParamKind::kAlpha);
      cell.edges.push_back(std::move(slot));
    }
    net.cells_.push_back(std::move(cell));
  }
  net.head_ = make_head(b, model);
  return net;
}

Network Network::discrete(const Genotype& genotype, ParamStore& params, Rng& init) {
  const ModelConfig& model = genotype.model;
  model.validate();
  const int inter = intermediate_count(model.nodes);
  for (const GenotypeCell& gc : genotype.cells) {
    const std::string k = to_string(gc.kind);
    if (static_cast<int>(gc.nodes.size()) != inter) {
      throw ConfigError("genotype " + k + " cell has " + std::to_string(gc.nodes.size()) +
                        " intermediate nodes, the model expects " + std::to_string(inter));
    }
    for (std::size_t j = 0; j < gc.nodes.size(); ++j) {
      const int node = static_cast<int>(j) + 2;
      if (gc.nodes[j].empty()) throw ConfigError("genotype " + k + " node " + std::to_string(node) + " has no inputs");
      for (const GenotypeEdge& e : gc.nodes[j]) {
        if (e.pred < 0 || e.pred >= node) {
          throw ConfigError("genotype " + k + " node " + std::to_string(node) + " has invalid predecessor " +
                            std::to_string(e.pred));
        }
        const auto cands = candidates(gc.kind, e.pred);
        if (e.op == OpTag::kNoneNormal || std::find(cands.begin(), cands.end(), e.op) == cands.end()) {
          throw ConfigError("genotype " + k + " node " + std::to_string(node) + ": operation " + to_string(e.op) +
                            " is not allowed on an edge from node " + std::to_string(e.pred));
        }
      }
    }
  }

  Network net;
  net.model_ = model;
  net.supernet_ = false;
  Builder b(params, draw_seed(init), model);
  const auto dims = model.cell_dims();
  const auto lanes = model.cell_lanes();
  for (std::size_t ci = 0; ci < model.cells.size(); ++ci) {
    const auto [in, out] = dims[ci];
    CellInstance cell = make_cell_shell(b, model, ci, prev_dim_of(model, ci), in, out, lanes[ci]);
    const GenotypeCell& gc = genotype.cell(cell.kind);
    for (std::size_t j = 0; j < gc.nodes.size(); ++j) {
      for (const GenotypeEdge& e : gc.nodes[j]) {
        const EdgeId id{e.pred, static_cast<int>(j) + 2};
        const Eigen::Index from = id.pred < 2 ? in : out;
        EdgeSlot slot{id, {b.op(e.op, from, out, lanes[ci], edge_prefix(cell_prefix(model, ci), id))}, {}};
        cell.edges.push_back(std::move(slot));
      }
    }
    net.cells_.push_back(std::move(cell));
  }
  net.head_ = make_head(b, model);
  return net;
}

EdgeMasks Network::masks_for(const Genotype& g) const {
  EdgeMasks masks;
  for (const CellInstance& cell : cells_) {
    const GenotypeCell& gc = g.cell(cell.kind);
    std::vector<bool> m;
    for (const EdgeSlot& slot : cell.edges) {
      const auto& node = gc.nodes.at(static_cast<std::size_t>(slot.id.node - 2));
      m.push_back(std::any_of(node.begin(), node.end(),
                              [&](const GenotypeEdge& e) { return e.pred == slot.id.pred; }));
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

BatchValue Network::cell_forward(ForwardContext& ctx, const CellInstance& cell, const BatchValue& in,
                                 const std::vector<bool>* mask) const {
  std::vector<BatchValue> nodes(static_cast<std::size_t>(cell.nodes - 1));
  nodes[0] = cell.prep0.apply(ctx, in);
  nodes[1] = cell.prep1.apply(ctx, in);
  for (int j = 2; j <= cell.nodes - 2; ++j) {
    std::vector<BatchValue> incoming;
    for (std::size_t e = 0; e < cell.edges.size(); ++e) {
      const EdgeSlot& slot = cell.edges[e];
      if (slot.id.node != j) continue;
      if (mask && !mask->empty() && !(*mask)[e]) continue;
      const BatchValue& src = nodes[static_cast<std::size_t>(slot.id.pred)];
      if (slot.alpha) {
        const Var w = op::activation(ctx.param(*slot.alpha), act_);
        incoming.push_back(mix_candidates(ctx, w, slot.ops, src));
      } else {
        incoming.push_back(slot.ops[0].apply(ctx, src));
      }
    }
    nodes[static_cast<std::size_t>(j)] = aggregate_node(ctx, incoming);
  }
  const std::size_t batch = in.size();
  BatchValue out(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    for (int j = 2; j <= cell.nodes - 2; ++j) {
      const auto& lanes = nodes[static_cast<std::size_t>(j)][s];
      out[s].insert(out[s].end(), lanes.begin(), lanes.end());
    }
  }
  return out;
}

BatchValue Network::features(ForwardContext& ctx, std::span<const Matrix> batch, const EdgeMasks* masks) const {
  if (batch.empty()) throw ContractError("forward: empty batch");
  BatchValue cur(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    if (batch[s].rows() != model_.input_dim || batch[s].cols() != model_.input_dim) {
      throw ShapeError("forward: sample " + std::to_string(s) + " is " + dim_str(batch[s].rows()) + "x" +
                       dim_str(batch[s].cols()) + ", the model expects " + dim_str(model_.input_dim) + "x" +
                       dim_str(model_.input_dim));
    }
    const Var x = ctx.tape().constant(batch[s], true);
    cur[s].assign(static_cast<std::size_t>(model_.channels), x);
  }
  if (masks && !masks->empty() && masks->size() != cells_.size()) {
    throw ShapeError("forward: edge masks given for " + std::to_string(masks->size()) + " cells, model has " +
                     std::to_string(cells_.size()));
  }
  for (std::size_t ci = 0; ci < cells_.size(); ++ci) {
    const std::vector<bool>* m = (masks && !masks->empty()) ? &(*masks)[ci] : nullptr;
    cur = cell_forward(ctx, cells_[ci], cur, m);
  }
  return cur;
}

std::vector<Var> Network::forward(ForwardContext& ctx, std::span<const Matrix> batch, const EdgeMasks* masks) const {
  const BatchValue feats = features(ctx, batch, masks);
  const Var w = ctx.param(head_[0]);
  const Var b = ctx.param(head_[1]);
  std::vector<Var> logits;
  logits.reserve(feats.size());
  for (const auto& lanes : feats) {
    std::vector<Var> parts;
    parts.reserve(lanes.size());
    for (const Var& x : lanes) parts.push_back(op::triu_flatten(layer::logeig(x)));
    logits.push_back(op::add(op::matmul(w, op::vconcat(parts)), b));
  }
  return logits;
}

LossValue batch_loss(std::span<const Var> logits, std::span<const int> labels) {
  if (logits.empty() || logits.size() != labels.size()) {
    throw ContractError("batch_loss: " + std::to_string(logits.size()) + " logits for " +
                        std::to_string(labels.size()) + " labels");
  }
  LossValue out;
  std::vector<Var> terms;
  terms.reserve(logits.size());
  for (std::size_t s = 0; s < logits.size(); ++s) {
    terms.push_back(op::cross_entropy(logits[s], labels[s]));
    Eigen::Index arg = 0;
    logits[s].value().col(0).maxCoeff(&arg);
    if (arg == labels[s]) ++out.correct;
  }
  out.loss = op::scale(op::sum(terms), 1.0 / static_cast<double>(logits.size()));
  return out;
}

}  // namespace spdnas
