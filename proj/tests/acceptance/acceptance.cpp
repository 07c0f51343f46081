// Acceptance suite: one PASS/FAIL line per criterion on stdout, details on
// the same line. Exit status is nonzero if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "spdnas/bilevel.hpp"
#include "spdnas/config.hpp"
#include "spdnas/error.hpp"
#include "spdnas/frechet.hpp"
#include "spdnas/gradcheck.hpp"
#include "spdnas/random.hpp"
#include "spdnas/simplex.hpp"
#include "spdnas/stiefel.hpp"

using namespace spdnas;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double min_eig(const Matrix& x) { return sym_eig(symmetrize(x)).values.minCoeff(); }

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto reports = gradcheck_suite(2024);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  std::vector<std::string> failed;
  std::set<std::string> names;
  for (const auto& r : reports) {
    names.insert(r.name);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    if (!r.passed) failed.push_back(r.name + (r.error.empty() ? "" : " (" + r.error + ")"));
  }
  bool covered = true;
  for (const char* required : {"bimap", "reeig", "logeig", "expeig", "batchnorm_train", "weighted_riem_pooling",
                               "avg_pool_reduced", "max_pool_reduced", "skip_reduced", "karcher_wfm",
                               "mixed_edge", "node_aggregate", "supernet_5_node"}) {
    if (!names.count(required)) {
      covered = false;
      failed.push_back(std::string("missing case ") + required);
    }
  }
  Outcome o;
  o.pass = failed.empty() && covered && secs < 300.0;
  o.detail = fmt("%zu cases, worst rel error %.3g (%s), %.1f s", reports.size(), worst, worst_name.c_str(), secs);
  for (const auto& f : failed) o.detail += "; failed: " + f;
  return o;
}

// ---------------------------------------------------------------- 2

Matrix geodesic(const Matrix& x1, const Matrix& x2, double t) {
  const Matrix s = spd_fn(x1, MatrixFunction::sqrt());
  const Matrix is = spd_fn(x1, MatrixFunction::invsqrt());
  return symmetrize(s * spd_fn(symmetrize(is * x2 * is), MatrixFunction::power(t)) * s);
}

Outcome frechet_oracles() {
  Rng rng = substream(2, "acceptance.frechet");
  std::uniform_int_distribution<int> dim(2, 10);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const WfmConfig cfg{WfmSolver::kKarcher, 100, 1e-13};
  double pair_err = 0.0, pair_err_default = 0.0;
  for (int t = 0; t < 500; ++t) {
    const Eigen::Index n = dim(rng);
    const std::vector<Matrix> pts = {random_spd(n, rng, std::exp(unit(rng) * std::log(100.0))),
                                     random_spd(n, rng, std::exp(unit(rng) * std::log(100.0)))};
    double a = unit(rng), b = unit(rng);
    while (a + b < 1e-6) b = unit(rng);
    Vector w(2);
    w << a / (a + b), b / (a + b);
    const Matrix expect = geodesic(pts[0], pts[1], w(1));
    const double scale = expect.norm();
    pair_err = std::max(pair_err, (karcher_wfm(pts, w, cfg).mean - expect).norm() / scale);
    pair_err_default = std::max(pair_err_default, (karcher_wfm(pts, w).mean - expect).norm() / scale);
  }
  double comm_err = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Eigen::Index n = dim(rng);
    const Matrix q = random_stiefel(n, n, rng);
    const int k = 2 + t % 4;
    std::vector<Matrix> pts;
    std::vector<Vector> spectra;
    Vector w(k);
    for (int i = 0; i < k; ++i) {
      Vector lam(n);
      for (Eigen::Index j = 0; j < n; ++j) lam(j) = std::exp(4.0 * unit(rng) - 2.0);
      spectra.push_back(lam);
      pts.push_back(symmetrize(q * lam.asDiagonal() * q.transpose()));
      w(i) = unit(rng) + 1e-3;
    }
    w /= w.sum();
    Vector geo = Vector::Ones(n);
    for (int i = 0; i < k; ++i) geo = geo.cwiseProduct(spectra[static_cast<std::size_t>(i)].array().pow(w(i)).matrix());
    const Matrix expect = q * geo.asDiagonal() * q.transpose();
    comm_err = std::max(comm_err, (karcher_wfm(pts, w, cfg).mean - expect).norm() / expect.norm());
  }
  Outcome o;
  o.pass = pair_err <= 1e-8 && comm_err <= 1e-7;
  o.detail = fmt("pairs max rel err %.3g over 500 (default 10-iteration solver: %.3g); commuting max rel err %.3g",
                 pair_err, pair_err_default, comm_err);
  return o;
}

// ---------------------------------------------------------------- 3

// Exact projection by enumerating supports: on a support S the minimizer is
// z_S − (Σ z_S − 1)/|S|; keep the closest feasible candidate.
Vector brute_force_projection(const Vector& z) {
  const Eigen::Index d = z.size();
  Vector best;
  double best_dist = INFINITY;
  for (unsigned mask = 1; mask < (1u << d); ++mask) {
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (mask & (1u << i)) {
        sum += z(i);
        ++count;
      }
    }
    const double tau = (sum - 1.0) / count;
    Vector p = Vector::Zero(d);
    bool feasible = true;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (mask & (1u << i)) {
        p(i) = z(i) - tau;
        if (p(i) < 0.0) feasible = false;
      }
    }
    if (!feasible) continue;
    const double dist = (p - z).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = p;
    }
  }
  return best;
}

// Projected gradient on ½‖p − z‖² over the simplex, using the brute-force
// projection above as the projector, iterated to a 1e-10 fixed point.
Vector projected_gradient(const Vector& z) {
  Vector p = Vector::Constant(z.size(), 1.0 / static_cast<double>(z.size()));
  for (int it = 0; it < 10000; ++it) {
    const Vector next = brute_force_projection(p - 0.5 * (p - z));
    const double step = (next - p).norm();
    p = next;
    if (step < 1e-12) break;
  }
  return p;
}

Outcome sparsemax_oracle() {
  Rng rng = substream(3, "acceptance.sparsemax");
  std::uniform_int_distribution<int> dim(2, 6);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  double err = 0.0;
  int shift_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Index d = dim(rng);
    Vector z(d);
    // Dyadic grid: z + c below is then exact in floating point.
    for (Eigen::Index i = 0; i < d; ++i) z(i) = std::ldexp(std::round(std::ldexp(normal(rng), 20)), -20);
    const Vector p = sparsemax(z);
    err = std::max(err, (p - projected_gradient(z)).cwiseAbs().maxCoeff());
    const double c = std::ldexp(std::round(std::ldexp(shift(rng), 10)), -10);
    if (sparsemax((z.array() + c).matrix()) != p) ++shift_mismatch;
  }
  Outcome o;
  o.pass = err <= 1e-8 && shift_mismatch == 0;
  o.detail = fmt("max abs err %.3g vs projected gradient over 1000 vectors; %d translation mismatches", err,
                 shift_mismatch);
  return o;
}

// ---------------------------------------------------------------- 4

void randomize(ParamStore& ps, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Param& p = ps[i];
    switch (p.kind) {
      case ParamKind::kStiefel:
        p.value = random_stiefel(p.value.rows(), p.value.cols(), rng);
        break;
      case ParamKind::kSpd:
      case ParamKind::kBuffer:
        p.value = random_spd(p.value.rows(), rng, std::exp(unit(rng) * std::log(1e2)));
        break;
      case ParamKind::kEuclidean:
      case ParamKind::kAlpha:
        p.value = random_gaussian(p.value.rows(), p.value.cols(), rng);
        break;
    }
  }
}

// Condition number up to 1e4 and an overall scale in [1e-5, 10], so small
// spectra regularly fall below the ReEig threshold.
Matrix random_input(Eigen::Index n, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return std::pow(10.0, 6.0 * unit(rng) - 5.0) * random_spd(n, rng, std::exp(unit(rng) * std::log(1e4)));
}

Outcome spd_preservation() {
  Rng rng = substream(4, "acceptance.spd");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const NormMode modes[] = {NormMode::kTrain, NormMode::kTrainFrozen, NormMode::kEval};

  ModelConfig m;
  m.input_dim = 12;
  m.channels = 2;
  m.cells = {{CellKind::kReduction, 0, 6}, {CellKind::kNormal, 0, 6}};
  double lowest = INFINITY, lowest_rect = INFINITY, worst_rect_ratio = INFINITY;
  std::size_t passes = 0, op_passes = 0, cell_passes = 0, checked = 0;
  std::set<std::string> ops_seen;

  for (int round = 0; round < 50; ++round) {
    ParamStore ps;
    Rng init = substream(static_cast<std::uint64_t>(round), "acceptance.spd.init");
    const Network net = Network::supernet(m, ps, init, round % 2 ? Activation::kSoftmax : Activation::kSparsemax);
    randomize(ps, rng);
    // Single ops: every catalogue entry on every edge of both cells.
    for (const CellInstance& cell : net.cells()) {
      for (const EdgeSlot& slot : cell.edges) {
        for (const OpInstance& op : slot.ops) {
          Tape t;
          ForwardContext ctx(t, ps, modes[passes % 3]);
          ctx.monitor().enabled = true;
          BatchValue in(2);
          for (auto& s : in) {
            for (int c = 0; c < cell.lanes; ++c) s.push_back(t.constant(random_input(op.in_dim, rng), true));
          }
          const BatchValue out = op.apply(ctx, in);
          for (const auto& s : out) {
            for (const Var& v : s) lowest = std::min(lowest, min_eig(v.value()));
          }
          lowest = std::min(lowest, ctx.monitor().min_eig);
          if (ctx.monitor().min_after_reeig < INFINITY) {
            lowest_rect = std::min(lowest_rect, ctx.monitor().min_after_reeig);
            worst_rect_ratio = std::min(worst_rect_ratio, ctx.monitor().min_after_reeig / op.reeig_epsilon);
          }
          checked += ctx.monitor().checked;
          ops_seen.insert(to_string(op.tag));
          passes += in.size();
          op_passes += in.size();
        }
      }
    }
    // Search-mode cells through the whole supernet.
    std::vector<Matrix> batch;
    for (int s = 0; s < 8; ++s) batch.push_back(random_input(m.input_dim, rng));
    Tape t;
    ForwardContext ctx(t, ps, modes[round % 3]);
    ctx.monitor().enabled = true;
    const BatchValue feats = net.features(ctx, batch);
    for (const auto& s : feats) {
      for (const Var& v : s) lowest = std::min(lowest, min_eig(v.value()));
    }
    lowest = std::min(lowest, ctx.monitor().min_eig);
    lowest_rect = std::min(lowest_rect, ctx.monitor().min_after_reeig);
    worst_rect_ratio = std::min(worst_rect_ratio, ctx.monitor().min_after_reeig / m.reeig_epsilon);
    checked += ctx.monitor().checked;
    passes += batch.size();
    cell_passes += batch.size();
  }
  // Batches of two per op add up; top up with single-sample op passes on
  // the reduction catalogue until 10,000 forward passes are reached.
  ParamStore ps;
  Rng init = substream(99, "acceptance.spd.init");
  const Network net = Network::supernet(m, ps, init);
  while (passes < 10000) {
    randomize(ps, rng);
    const CellInstance& cell = net.cells()[passes % 2];
    const EdgeSlot& slot = cell.edges[passes % cell.edges.size()];
    const OpInstance& op = slot.ops[passes % slot.ops.size()];
    Tape t;
    ForwardContext ctx(t, ps, modes[passes % 3]);
    ctx.monitor().enabled = true;
    BatchValue in(1);
    for (int c = 0; c < cell.lanes; ++c) in[0].push_back(t.constant(random_input(op.in_dim, rng), true));
    const BatchValue out = op.apply(ctx, in);
    for (const Var& v : out[0]) lowest = std::min(lowest, min_eig(v.value()));
    lowest = std::min(lowest, ctx.monitor().min_eig);
    if (ctx.monitor().min_after_reeig < INFINITY) {
      lowest_rect = std::min(lowest_rect, ctx.monitor().min_after_reeig);
      worst_rect_ratio = std::min(worst_rect_ratio, ctx.monitor().min_after_reeig / op.reeig_epsilon);
    }
    checked += ctx.monitor().checked;
    ++passes;
    ++op_passes;
  }
  Outcome o;
  // Eigenvalues of U max(Λ, ε) Uᵀ are recomputed numerically, so ≥ ε holds
  // up to eigensolver round-off; 1e-9 relative covers it.
  o.pass = lowest > 0.0 && worst_rect_ratio >= 1.0 - 1e-9 && ops_seen.size() == 9;
  o.detail = fmt("%zu forward passes (%zu single-op, %zu through search cells), %zu intermediates checked, "
                 "%zu op kinds; min eig %.3g, min after ReEig %.6g (eps 1e-4)",
                 passes, op_passes, cell_passes, checked, ops_seen.size(), lowest, lowest_rect);
  return o;
}

// ---------------------------------------------------------------- 5

Outcome stiefel_contract() {
  Rng rng = substream(5, "acceptance.stiefel");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ParamStore ps;
  const std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes = {{20, 10}, {10, 10}, {10, 5}, {93, 30},
                                                                     {8, 1},   {6, 3},   {30, 30}};
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    ps.get_or_add("W" + std::to_string(i), ParamKind::kStiefel, random_stiefel(shapes[i].first, shapes[i].second, rng));
  }
  ps.get_or_add("G", ParamKind::kSpd, Matrix::Identity(4, 4));
  ps.get_or_add("b", ParamKind::kEuclidean, Matrix::Zero(3, 1));
  std::vector<Matrix> bufs;
  double worst = 0.0;
  std::string error;
  for (int step = 0; step < 1000 && error.empty(); ++step) {
    // Random loss: ⟨C, W⟩ + ½λ‖W − D‖² with gradients spanning six decades.
    std::vector<Matrix> grads(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const Matrix& w = ps[i].value;
      const double scale = std::pow(10.0, 6.0 * unit(rng) - 3.0);
      if (ps[i].kind == ParamKind::kStiefel) {
        const Matrix c = random_gaussian(w.rows(), w.cols(), rng, scale);
        const Matrix d = random_gaussian(w.rows(), w.cols(), rng);
        grads[i] = c + unit(rng) * (w - d);
      } else if (ps[i].kind == ParamKind::kSpd) {
        grads[i] = random_symmetric(w.rows(), rng, 0.1);
      } else {
        grads[i] = random_gaussian(w.rows(), w.cols(), rng);
      }
    }
    try {
      weight_step(ps, grads, 0.025 * (0.5 + unit(rng)), 0.9, bufs);
    } catch (const Error& e) {
      error = e.what();
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i].kind == ParamKind::kStiefel) worst = std::max(worst, orthonormality_error(ps[i].value));
    }
  }
  Outcome o;
  o.pass = error.empty() && worst <= 1e-10;
  o.detail = fmt("1000 steps on %zu Stiefel parameters, max ||W'W - I||_F %.3g", shapes.size(), worst);
  if (!error.empty()) o.detail += "; " + error;
  return o;
}

// ---------------------------------------------------------------- 6, 7, 8

SynthConfig radar_synth(std::uint64_t seed) {
  SynthConfig s;
  s.classes = 3;
  s.dim = 20;
  s.per_class = 300;
  s.seed = seed;
  return s;
}

constexpr std::uint64_t kRunSeed = 7;

struct EndToEnd {
  bool ran = false;
  std::string error;
  Genotype genotype;
  double test_acc = 0.0;
  double search_s = 0.0;
  double total_s = 0.0;
};

EndToEnd& end_to_end() {
  static EndToEnd r;
  if (r.ran) return r;
  r.ran = true;
  const auto t0 = Clock::now();
  try {
    const Dataset d = synth_generate(radar_synth(kRunSeed));
    const Splits sp = stratified_split(d, {0.5, 0.25, 0.25, kRunSeed});
    const ModelConfig m;  // 20 → 10 reduction cell, 10 normal cell
    SearchConfig sc;
    sc.seed = kRunSeed;
    sc.epochs = 10;
    sc.order = HyperOrder::kSecond;
    sc.activation = Activation::kSparsemax;
    const SearchResult sr = search_loop(sp, m, sc);
    r.search_s = seconds_since(t0);
    r.genotype = sr.genotype;
    TrainConfig tc;
    tc.seed = kRunSeed;
    tc.epochs = 50;
    tc.lr = 0.025;
    tc.batch_size = 30;
    const TrainResult tr = train_loop(sp, sr.genotype, tc);
    r.test_acc = tr.test.accuracy;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.total_s = seconds_since(t0);
  return r;
}

Outcome end_to_end_run() {
  const EndToEnd& r = end_to_end();
  Outcome o;
  o.pass = r.error.empty() && r.test_acc >= 0.90 && r.total_s <= 3600.0;
  o.detail = fmt("test accuracy %.4f, search %.0f s, total %.0f s on %u hardware thread(s)", r.test_acc, r.search_s,
                 r.total_s, std::max(1u, std::thread::hardware_concurrency()));
  if (!r.error.empty()) o.detail += "; " + r.error;
  return o;
}

// α learning rate for the ablation; see the README for why it differs from
// the default.
constexpr double kAblationAlphaLr = 3e-3;

Outcome sparsity_ablation() {
  const Dataset d = synth_generate(radar_synth(kRunSeed));
  const Splits sp = stratified_split(d, {0.5, 0.25, 0.25, kRunSeed});
  const ModelConfig m;
  struct Arm {
    double mean_support = 0.0;
    int full = 0;
    int with_zero = 0;
    int edges = 0;
  };
  auto run = [&](Activation act) {
    SearchConfig sc;
    sc.seed = kRunSeed;
    sc.epochs = 10;
    sc.activation = act;
    sc.alpha.lr = kAblationAlphaLr;
    const SearchResult sr = search_loop(sp, m, sc);
    Arm a;
    for (const EdgeSupport& e : edge_supports(sr.params, m, act)) {
      a.mean_support += e.support;
      a.full += e.support == e.candidates;
      a.with_zero += e.support < e.candidates;
      ++a.edges;
    }
    a.mean_support /= a.edges;
    return a;
  };
  const Arm sm = run(Activation::kSparsemax);
  const Arm so = run(Activation::kSoftmax);
  Outcome o;
  o.pass = sm.mean_support < so.mean_support && so.full == so.edges && 2 * sm.with_zero >= sm.edges;
  o.detail = fmt("alpha lr %.0e; mean support sparsemax %.2f vs softmax %.2f; softmax full on %d/%d edges; "
                 "sparsemax has a zero weight on %d/%d edges",
                 kAblationAlphaLr, sm.mean_support, so.mean_support, so.full, so.edges, sm.with_zero, sm.edges);
  return o;
}

constexpr double kDartsReferenceMb = 2.6383;

Outcome model_footprint() {
  const EndToEnd& r = end_to_end();
  Outcome o;
  if (!r.error.empty()) {
    o.detail = "end-to-end run failed: " + r.error;
    return o;
  }
  ParamStore ps;
  Rng init = substream(kRunSeed, "acceptance.footprint");
  Network::discrete(r.genotype, ps, init);
  const ParamReport rep = param_report(ps);
  const double ratio = kDartsReferenceMb / rep.megabytes;
  o.pass = rep.megabytes >= 0.01 && rep.megabytes <= 0.05 && ratio >= 50.0;
  o.detail = fmt("%zu parameters, %.5f MB, %.1fx smaller than %.4f MB", rep.count, rep.megabytes, ratio,
                 kDartsReferenceMb);
  return o;
}

// ---------------------------------------------------------------- 9

Genotype random_genotype(const ModelConfig& m, Rng& rng) {
  Genotype g;
  g.model = m;
  std::set<CellKind> kinds;
  for (const CellConfig& c : m.cells) kinds.insert(c.kind);
  for (CellKind kind : kinds) {
    GenotypeCell cell{kind, {}};
    for (int j = 2; j < m.nodes - 1; ++j) {
      std::vector<int> preds(static_cast<std::size_t>(j));
      for (int i = 0; i < j; ++i) preds[static_cast<std::size_t>(i)] = i;
      std::shuffle(preds.begin(), preds.end(), rng);
      preds.resize(2);
      std::sort(preds.begin(), preds.end());
      std::vector<GenotypeEdge> node;
      for (int p : preds) {
        std::vector<OpTag> ops;
        for (OpTag t : candidates(kind, p)) {
          if (t != OpTag::kNoneNormal) ops.push_back(t);
        }
        node.push_back({p, ops[std::uniform_int_distribution<std::size_t>(0, ops.size() - 1)(rng)]});
      }
      cell.nodes.push_back(node);
    }
    g.cells.push_back(cell);
  }
  return g;
}

Outcome supernet_consistency() {
  Rng rng = substream(9, "acceptance.consistency");
  std::uniform_int_distribution<int> coin(0, 1);
  double worst = 0.0;
  std::string error;
  for (int inst = 0; inst < 100 && error.empty(); ++inst) {
    ModelConfig m;
    m.input_dim = 8;
    m.nodes = 4 + coin(rng);
    m.channels = 1 + coin(rng);
    m.share_op_params = coin(rng) == 1;
    if (coin(rng)) {
      m.cells = {{CellKind::kReduction, 0, 4}, {CellKind::kNormal, 0, 4}};
    } else {
      m.cells = {{CellKind::kNormal, 6, 6}, {CellKind::kReduction, 0, 2}};
    }
    try {
      ParamStore ps;
      Rng init = substream(static_cast<std::uint64_t>(inst), "acceptance.consistency.init");
      const Network super = Network::supernet(m, ps, init);
      randomize(ps, rng);
      const Genotype g = random_genotype(m, rng);
      const auto edges = cell_edges(m.nodes);
      for (const GenotypeCell& gc : g.cells) {
        for (std::size_t e = 0; e < edges.size(); ++e) {
          Param& a = ps[*ps.find("alpha." + to_string(gc.kind) + ".edge" + std::to_string(e))];
          a.value.setZero();
          const auto cands = candidates(gc.kind, edges[e].pred);
          for (const GenotypeEdge& ge : gc.nodes[static_cast<std::size_t>(edges[e].node - 2)]) {
            if (ge.pred == edges[e].pred) {
              a.value(std::find(cands.begin(), cands.end(), ge.op) - cands.begin(), 0) = 5.0;
            }
          }
        }
      }
      const Network disc = Network::discrete(g, ps, init);
      const EdgeMasks masks = super.masks_for(g);
      std::vector<Matrix> batch;
      for (int s = 0; s < 3; ++s) batch.push_back(random_input(m.input_dim, rng));
      for (NormMode mode : {NormMode::kTrainFrozen, NormMode::kEval}) {
        Tape t1, t2;
        ForwardContext c1(t1, ps, mode), c2(t2, ps, mode);
        const auto a = super.forward(c1, batch, &masks);
        const auto b = disc.forward(c2, batch);
        for (std::size_t s = 0; s < batch.size(); ++s) {
          worst = std::max(worst, (a[s].value() - b[s].value()).cwiseAbs().maxCoeff());
        }
      }
    } catch (const std::exception& e) {
      error = fmt("instance %d: %s", inst, e.what());
    }
  }
  Outcome o;
  o.pass = error.empty() && worst <= 1e-6;
  o.detail = fmt("100 random instances, max |logit difference| %.3g", worst);
  if (!error.empty()) o.detail += "; " + error;
  return o;
}

// ---------------------------------------------------------------- 10

struct Cli {
  std::string binary;
  fs::path work;

  int run(const std::string& args) const {
    const std::string cmd = "\"" + binary + "\" " + args + " > \"" + (work / "cli.log").string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
  }
};

std::string config_for_determinism(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.workers = 2;
  c.data.synth.dim = 10;
  c.data.synth.per_class = 20;
  c.model.input_dim = 10;
  c.model.cells = {{CellKind::kReduction, 0, 4}, {CellKind::kNormal, 0, 4}};
  c.search.epochs = 2;
  c.search.batch_size = 10;
  c.train.epochs = 3;
  c.train.batch_size = 10;
  return run_config_to_json(c);
}

Outcome determinism(const std::string& cli_binary) {
  Outcome o;
  if (cli_binary.empty() || !fs::exists(cli_binary)) {
    o.detail = "spdnas binary not found: " + cli_binary;
    return o;
  }
  const fs::path work = fs::temp_directory_path() / ("spdnas_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);
  const Cli cli{cli_binary, work};
  write_file_atomic(work / "config.json", config_for_determinism(31));
  std::vector<std::string> mismatched;
  int failures = 0;
  auto same = [&](const fs::path& a, const fs::path& b) {
    if (!fs::exists(a) || !fs::exists(b) || read_text_file(a) != read_text_file(b)) {
      mismatched.push_back(a.filename().string());
    }
  };
  auto p = [&](const fs::path& x) { return "\"" + x.string() + "\""; };
  failures += cli.run("search --config " + p(work / "config.json") + " --out " + p(work / "s1")) != 0;
  failures += cli.run("search --config " + p(work / "s1" / "manifest.json") + " --out " + p(work / "s2")) != 0;
  same(work / "s1" / "genotype.json", work / "s2" / "genotype.json");
  same(work / "s1" / "metrics.csv", work / "s2" / "metrics.csv");
  same(work / "s1" / "alpha_history.csv", work / "s2" / "alpha_history.csv");
  failures += cli.run("train --config " + p(work / "s1" / "manifest.json") + " --out " + p(work / "t1")) != 0;
  failures += cli.run("train --config " + p(work / "t1" / "manifest.json") + " --out " + p(work / "t2")) != 0;
  same(work / "t1" / "genotype.json", work / "t2" / "genotype.json");
  same(work / "t1" / "metrics.csv", work / "t2" / "metrics.csv");
  o.pass = failures == 0 && mismatched.empty();
  o.detail = fmt("2 searches and 2 trainings from manifests, %d failed commands, %zu mismatched files", failures,
                 mismatched.size());
  for (const auto& m : mismatched) o.detail += "; differs: " + m;
  if (o.pass) fs::remove_all(work);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spdnas acceptance suite"};
  std::vector<int> only;
  std::string cli_binary = SPDNAS_CLI_PATH;
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 10))->delimiter(',');
  app.add_option("--cli", cli_binary, "Path to the spdnas binary");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"frechet oracles", frechet_oracles},
      {"sparsemax oracle", sparsemax_oracle},
      {"spd preservation", spd_preservation},
      {"stiefel contract", stiefel_contract},
      {"end-to-end synthetic run", end_to_end_run},
      {"sparsity ablation", sparsity_ablation},
      {"model footprint", model_footprint},
      {"supernet/subnet consistency", supernet_consistency},
      {"determinism", [&] { return determinism(cli_binary); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.detail = std::string("threw: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << fmt(" [%.1f s]", seconds_since(t0)) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
