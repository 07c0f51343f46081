#include "spdnas/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spdnas/error.hpp"
#include "spdnas/layers.hpp"
#include "spdnas/random.hpp"
#include "spdnas/search_space.hpp"
#include "spdnas/stiefel.hpp"

namespace spdnas {

GradcheckReport gradcheck(const std::string& name, const GradFn& f, std::span<const Matrix> inputs,
                          const std::vector<bool>& symmetric, const GradcheckOptions& opts) {
  GradcheckReport r;
  r.name = name;
  try {
    if (symmetric.size() != inputs.size()) throw ContractError("gradcheck: one symmetry flag per input required");
    std::vector<Matrix> vals(inputs.begin(), inputs.end());
    auto eval = [&](std::vector<Matrix>* grads) {
      Tape t;
      std::vector<Var> leaves;
      leaves.reserve(vals.size());
      for (std::size_t i = 0; i < vals.size(); ++i) leaves.push_back(t.leaf(vals[i], symmetric[i]));
      const Var y = f(t, leaves);
      if (y.rows() != 1 || y.cols() != 1) throw ContractError("gradcheck: function is not scalar");
      if (grads) {
        const Gradients g = t.backward(y);
        for (const Var& l : leaves) grads->push_back(g.wrt(l));
      }
      return y.scalar();
    };

    std::vector<Matrix> analytic;
    eval(&analytic);
    double gmax = 0.0;
    for (const Matrix& a : analytic) {
      if (a.size() > 0) gmax = std::max(gmax, a.cwiseAbs().maxCoeff());
    }
    const double floor = std::max(1e-3 * gmax, 1e-8);
    Rng rng = substream(opts.seed, "gradcheck." + name);

    for (std::size_t l = 0; l < vals.size(); ++l) {
      std::vector<std::pair<Eigen::Index, Eigen::Index>> coords;
      for (Eigen::Index i = 0; i < vals[l].rows(); ++i) {
        for (Eigen::Index j = symmetric[l] ? i : 0; j < vals[l].cols(); ++j) coords.emplace_back(i, j);
      }
      if (opts.max_coords_per_leaf > 0 && coords.size() > opts.max_coords_per_leaf) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(opts.max_coords_per_leaf);
      }
      const Matrix& a = analytic[l];
      for (const auto& [i, j] : coords) {
        const bool pair = symmetric[l] && i != j;
        const double an = pair ? a(i, j) + a(j, i) : a(i, j);
        const Matrix orig = vals[l];
        // Realized steps: x ± h is rounded, so divide by what was actually added.
        const double up = (orig(i, j) + opts.step) - orig(i, j);
        const double down = orig(i, j) - (orig(i, j) - opts.step);
        vals[l](i, j) = orig(i, j) + up;
        if (pair) vals[l](j, i) = orig(j, i) + up;
        const double fp = eval(nullptr);
        vals[l] = orig;
        vals[l](i, j) = orig(i, j) - down;
        if (pair) vals[l](j, i) = orig(j, i) - down;
        const double fm = eval(nullptr);
        vals[l] = orig;
        const double num = (fp - fm) / (up + down);
        const double rel = std::abs(an - num) / std::max({std::abs(an), std::abs(num), floor});
        ++r.coords;
        const double worst = std::isnan(rel) ? INFINITY : rel;
        if (r.coords == 1 || worst > r.max_rel_error) {
          r.max_rel_error = worst;
          r.leaf = l;
          r.row = i;
          r.col = j;
          r.analytic = an;
          r.numeric = num;
        }
      }
    }
    r.passed = r.max_rel_error <= opts.tol;
  } catch (const std::exception& e) {
    r.error = e.what();
    r.passed = false;
  }
  return r;
}

namespace {

// ⟨C, Y⟩ with a fixed random symmetric C: a scalarization that sees every
// output direction.
Var probe(Tape& t, Var y, Rng& rng) {
  Matrix c = random_symmetric(y.rows(), rng);
  if (y.rows() != y.cols()) c = random_gaussian(y.rows(), y.cols(), rng);
  return op::dot(t.constant(c, y.rows() == y.cols()), y);
}

// Deterministic probe: the same C on every evaluation of one case.
struct Probe {
  std::uint64_t seed;
  Var operator()(Tape& t, Var y, int k = 0) const {
    Rng rng = substream(seed, "probe." + std::to_string(k));
    return probe(t, y, rng);
  }
};

Matrix spd_with_spectrum(const Vector& lam, Rng& rng) {
  const Matrix q = random_stiefel(lam.size(), lam.size(), rng);
  return symmetrize(q * lam.asDiagonal() * q.transpose());
}

struct Case {
  std::string name;
  GradFn fn;
  std::vector<Matrix> inputs;
  std::vector<bool> symmetric;
  std::size_t max_coords = 0;
};

const WfmConfig kFixedKarcher{WfmSolver::kKarcher, 5, 0.0};

// Network-level case: leaves are the non-buffer parameters; the batch is
// fixed data.
Case network_case(const std::string& name, std::shared_ptr<const Network> net, std::shared_ptr<ParamStore> store,
                  std::vector<Matrix> batch, std::vector<int> labels, std::size_t max_coords) {
  Case c;
  c.name = name;
  c.max_coords = max_coords;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < store->size(); ++i) {
    const Param& p = (*store)[i];
    if (p.kind == ParamKind::kBuffer) continue;
    idx.push_back(i);
    c.inputs.push_back(p.value);
    c.symmetric.push_back(p.kind == ParamKind::kSpd);
  }
  c.fn = [net, store, idx, batch, labels](Tape& t, std::span<const Var> leaves) {
    ParamStore local = *store;
    ForwardContext ctx(t, local, NormMode::kTrainFrozen, kFixedKarcher);
    for (std::size_t k = 0; k < idx.size(); ++k) ctx.bind(idx[k], leaves[k]);
    const std::vector<Var> logits = net->forward(ctx, batch);
    return batch_loss(logits, labels).loss;
  };
  return c;
}

std::vector<Case> build_cases(std::uint64_t seed, bool inject_fault) {
  std::vector<Case> cases;
  Rng rng = substream(seed, "gradcheck.inputs");
  const Probe pr{mix64(seed + 17)};

  {
    const Matrix c = random_gaussian(4, 4, rng);
    cases.push_back({"linear", [c](Tape& t, std::span<const Var> l) { return op::dot(t.constant(c), l[0]); },
                     {random_gaussian(4, 4, rng)}, {false}});
  }
  cases.push_back({"bimap", [pr](Tape& t, std::span<const Var> l) { return pr(t, layer::bimap(l[0], l[1])); },
                   {random_spd(6, rng, 20.0), random_stiefel(6, 4, rng)}, {true, false}});
  {
    Vector lam(6);
    lam << 2.0, 1.0, 0.5, 5e-5, 3e-5, 1e-5;
    cases.push_back({"reeig", [pr](Tape& t, std::span<const Var> l) { return pr(t, layer::reeig(l[0], 1e-4)); },
                     {spd_with_spectrum(lam, rng)}, {true}});
    Vector clamped(5);
    clamped << 0.5, 4e-5, 3e-5, 2e-5, 1e-5;
    cases.push_back({"reeig_clamped_spectrum",
                     [pr](Tape& t, std::span<const Var> l) { return pr(t, layer::reeig(l[0], 1e-4)); },
                     {spd_with_spectrum(clamped, rng)}, {true}});
  }
  cases.push_back({"logeig", [pr](Tape& t, std::span<const Var> l) { return pr(t, layer::logeig(l[0])); },
                   {random_spd(6, rng, 50.0)}, {true}});
  cases.push_back({"expeig", [pr](Tape& t, std::span<const Var> l) { return pr(t, layer::expeig(l[0])); },
                   {random_symmetric(6, rng, 0.7)}, {true}});
  cases.push_back({"sqrtm", [pr](Tape& t, std::span<const Var> l) {
                     return pr(t, op::spectral(l[0], MatrixFunction::sqrt()));
                   },
                   {random_spd(5, rng, 20.0)}, {true}});
  cases.push_back({"invsqrtm", [pr](Tape& t, std::span<const Var> l) {
                     return pr(t, op::spectral(l[0], MatrixFunction::invsqrt()));
                   },
                   {random_spd(5, rng, 20.0)}, {true}});
  cases.push_back({"powm", [pr](Tape& t, std::span<const Var> l) {
                     return pr(t, op::spectral(l[0], MatrixFunction::power(0.3)));
                   },
                   {random_spd(5, rng, 20.0)}, {true}});
  {
    Vector lam(4);
    lam << 2.0, 2.0, 0.5, 0.5;
    cases.push_back({"logeig_repeated_eigenvalues",
                     [pr](Tape& t, std::span<const Var> l) { return pr(t, layer::logeig(l[0])); },
                     {spd_with_spectrum(lam, rng)}, {true}});
  }
  for (const NormMode mode : {NormMode::kTrainFrozen, NormMode::kEval}) {
    auto running = std::make_shared<Matrix>(random_spd(4, rng, 5.0));
    cases.push_back({mode == NormMode::kEval ? "batchnorm_eval" : "batchnorm_train",
                     [pr, running, mode](Tape& t, std::span<const Var> l) {
                       Matrix rm = *running;
                       const std::vector<Var> ys =
                           layer::batchnorm(l.subspan(1), l[0], rm, 0.9, mode, kFixedKarcher);
                       std::vector<Var> terms;
                       for (std::size_t s = 0; s < ys.size(); ++s) terms.push_back(pr(t, ys[s], static_cast<int>(s)));
                       return op::sum(terms);
                     },
                     {random_spd(4, rng, 5.0), random_spd(4, rng, 10.0), random_spd(4, rng, 10.0),
                      random_spd(4, rng, 10.0)},
                     {true, true, true, true}});
  }
  cases.push_back({"weighted_riem_pooling",
                   [pr](Tape& t, std::span<const Var> l) {
                     std::vector<Var> rows;
                     for (Eigen::Index r = 0; r < 2; ++r) {
                       const std::vector<Eigen::Index> idx{3 * r, 3 * r + 1, 3 * r + 2};
                       rows.push_back(op::activation(op::gather(l[0], idx), Activation::kSoftmax));
                     }
                     const auto out = layer::weighted_riem_pooling(l.subspan(1), rows, kFixedKarcher);
                     return op::add(pr(t, out[0], 0), pr(t, out[1], 1));
                   },
                   {random_gaussian(6, 1, rng), random_spd(4, rng, 8.0), random_spd(4, rng, 8.0),
                    random_spd(4, rng, 8.0)},
                   {false, true, true, true}});
  struct PoolCase {
    const char* name;
    Eigen::Index n;
    int k;
    op::PoolKind kind;
  };
  for (const PoolCase& p : {PoolCase{"avg_pool_reduced", 8, 2, op::PoolKind::kAverage},
                            PoolCase{"max_pool_reduced", 8, 2, op::PoolKind::kMax},
                            PoolCase{"avg_pool_reduced_padded", 7, 2, op::PoolKind::kAverage},
                            PoolCase{"max_pool_reduced_k4", 8, 4, op::PoolKind::kMax}}) {
    const int k = p.k;
    const op::PoolKind kind = p.kind;
    cases.push_back({p.name, [pr, k, kind](Tape& t, std::span<const Var> l) {
                       return pr(t, layer::reduced_pool(l[0], k, kind));
                     },
                     {random_spd(p.n, rng, 30.0)}, {true}});
  }
  cases.push_back({"skip_reduced",
                   [pr](Tape& t, std::span<const Var> l) { return pr(t, layer::skip_reduced(l[0], l[1], l[2])); },
                   {random_spd(6, rng, 20.0), random_stiefel(6, 2, rng), random_stiefel(6, 2, rng)},
                   {true, false, false}});
  cases.push_back({"karcher_wfm",
                   [pr](Tape& t, std::span<const Var> l) {
                     const Var w = op::activation(l[0], Activation::kSoftmax);
                     return pr(t, karcher_wfm(l.subspan(1), w, kFixedKarcher).mean);
                   },
                   {random_gaussian(3, 1, rng), random_spd(4, rng, 8.0), random_spd(4, rng, 8.0),
                    random_spd(4, rng, 8.0)},
                   {false, true, true, true}});
  cases.push_back({"recursive_wfm",
                   [pr](Tape& t, std::span<const Var> l) {
                     const Var w = op::activation(l[0], Activation::kSoftmax);
                     return pr(t, recursive_wfm(l.subspan(1), w).mean);
                   },
                   {random_gaussian(3, 1, rng), random_spd(4, rng, 8.0), random_spd(4, rng, 8.0),
                    random_spd(4, rng, 8.0)},
                   {false, true, true, true}});
  {
    const Matrix target = random_spd(5, rng, 10.0);
    cases.push_back({"distance_squared",
                     [target](Tape& t, std::span<const Var> l) {
                       const Var s = op::spectral(l[0], MatrixFunction::invsqrt());
                       const Var inner = op::sandwich(s, t.constant(target, true));
                       return op::scale(op::frob_sq(layer::logeig(inner)), 0.25);
                     },
                     {random_spd(5, rng, 10.0)}, {true}});
  }
  cases.push_back({"bimap_reeig_logeig_chain",
                   [](Tape&, std::span<const Var> l) {
                     return op::frob_sq(layer::logeig(layer::reeig(layer::bimap(l[0], l[1]), 1e-4)));
                   },
                   {random_spd(8, rng, 100.0), random_stiefel(8, 5, rng)}, {true, false}});
  for (const Activation a : {Activation::kSparsemax, Activation::kSoftmax, Activation::kSigmoid}) {
    const Matrix c = random_gaussian(5, 1, rng);
    cases.push_back({"activation_" + to_string(a),
                     [c, a](Tape& t, std::span<const Var> l) {
                       return op::dot(t.constant(c), op::activation(l[0], a));
                     },
                     {random_gaussian(5, 1, rng, 0.3)}, {false}});
  }
  {
    const Matrix w = random_gaussian(3, 10, rng);
    cases.push_back({"logeig_head_cross_entropy",
                     [w](Tape& t, std::span<const Var> l) {
                       const Var f = op::triu_flatten(layer::logeig(l[0]));
                       return op::cross_entropy(op::add(op::matmul(t.constant(w), f), l[1]), 1);
                     },
                     {random_spd(4, rng, 10.0), random_gaussian(3, 1, rng)}, {true, false}});
  }

  // Mixed edge and node aggregation on ops built by a real supernet.
  {
    ModelConfig m;
    m.input_dim = 5;
    m.classes = 2;
    m.channels = 2;
    m.cells = {{CellKind::kNormal, 0, 5}};
    auto store = std::make_shared<ParamStore>();
    Rng init = substream(seed, "gradcheck.init");
    auto net = std::make_shared<const Network>(Network::supernet(m, *store, init));
    for (std::size_t i = 0; i < store->size(); ++i) {
      Param& p = (*store)[i];
      if (p.kind == ParamKind::kAlpha) p.value = random_gaussian(p.value.rows(), 1, rng, 0.3);
      if (p.kind == ParamKind::kEuclidean) p.value = random_gaussian(p.value.rows(), p.value.cols(), rng, 0.5);
      if (p.kind == ParamKind::kSpd) p.value = random_spd(p.value.rows(), rng, 3.0);
    }
    std::vector<std::size_t> idx;
    Case c;
    c.name = "mixed_edge";
    c.max_coords = 6;
    for (std::size_t i = 0; i < store->size(); ++i) {
      if ((*store)[i].kind == ParamKind::kBuffer) continue;
      idx.push_back(i);
      c.inputs.push_back((*store)[i].value);
      c.symmetric.push_back((*store)[i].kind == ParamKind::kSpd);
    }
    const std::size_t np = idx.size();
    for (int s = 0; s < 4; ++s) {
      c.inputs.push_back(random_spd(5, rng, 10.0));
      c.symmetric.push_back(true);
    }
    c.fn = [net, store, idx, np, pr](Tape& t, std::span<const Var> l) {
      const EdgeSlot& slot = net->cells()[0].edges[0];
      ParamStore local = *store;
      ForwardContext ctx(t, local, NormMode::kTrainFrozen, kFixedKarcher);
      for (std::size_t k = 0; k < np; ++k) ctx.bind(idx[k], l[k]);
      BatchValue in = {{l[np], l[np + 1]}, {l[np + 2], l[np + 3]}};
      const Var w = op::activation(ctx.param(*slot.alpha), Activation::kSparsemax);
      const BatchValue out = mix_candidates(ctx, w, slot.ops, in);
      std::vector<Var> terms;
      for (std::size_t s = 0; s < out.size(); ++s) {
        for (std::size_t ch = 0; ch < out[s].size(); ++ch) terms.push_back(pr(t, out[s][ch], static_cast<int>(2 * s + ch)));
      }
      return op::sum(terms);
    };
    cases.push_back(std::move(c));

    Case agg;
    agg.name = "node_aggregate";
    for (int e = 0; e < 3; ++e) {
      agg.inputs.push_back(random_spd(5, rng, 10.0));
      agg.symmetric.push_back(true);
    }
    agg.fn = [pr](Tape& t, std::span<const Var> l) {
      ParamStore empty;
      ForwardContext ctx(t, empty, NormMode::kTrainFrozen, kFixedKarcher);
      std::vector<BatchValue> edges;
      for (const Var& x : l) edges.push_back({{x}});
      return pr(t, aggregate_node(ctx, edges)[0][0]);
    };
    cases.push_back(std::move(agg));
  }

  // Full five-node supernet: a reduction cell 8 → 4 and a normal cell.
  {
    ModelConfig m;
    m.input_dim = 8;
    m.classes = 3;
    m.channels = 1;
    m.cells = {{CellKind::kReduction, 0, 4}, {CellKind::kNormal, 0, 4}};
    auto store = std::make_shared<ParamStore>();
    Rng init = substream(seed, "gradcheck.supernet");
    auto net = std::make_shared<const Network>(Network::supernet(m, *store, init));
    for (std::size_t i = 0; i < store->size(); ++i) {
      Param& p = (*store)[i];
      if (p.kind == ParamKind::kAlpha) p.value = random_gaussian(p.value.rows(), 1, rng, 0.3);
      if (p.kind == ParamKind::kEuclidean) p.value = random_gaussian(p.value.rows(), p.value.cols(), rng, 0.5);
      if (p.kind == ParamKind::kSpd) p.value = random_spd(p.value.rows(), rng, 3.0);
    }
    std::vector<Matrix> batch = {random_spd(8, rng, 20.0), random_spd(8, rng, 20.0), random_spd(8, rng, 20.0)};
    cases.push_back(network_case("supernet_5_node", net, store, batch, {0, 2, 1}, 4));
  }

  if (inject_fault) {
    cases.push_back({"injected_fault",
                     [pr](Tape& t, std::span<const Var> l) {
                       const Var x = l[0];
                       const Var y = t.record(
                           "corrupt", {x}, x.value(),
                           [x](const Matrix& g, Adjoints& out) { out.add(x, 1.5 * g); }, true);
                       return pr(t, y);
                     },
                     {random_spd(4, rng, 5.0)}, {true}});
  }
  return cases;
}

}  // namespace

std::vector<GradcheckReport> gradcheck_suite(std::uint64_t seed, bool inject_fault) {
  std::vector<GradcheckReport> out;
  for (const Case& c : build_cases(seed, inject_fault)) {
    GradcheckOptions o;
    o.seed = seed;
    o.max_coords_per_leaf = c.max_coords;
    out.push_back(gradcheck(c.name, c.fn, c.inputs, c.symmetric, o));
  }
  return out;
}

}  // namespace spdnas
