#include "spdnas/bilevel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <memory>
#include <sstream>

#include "spdnas/error.hpp"
#include "spdnas/log.hpp"
#include "spdnas/stiefel.hpp"

namespace spdnas {

std::string to_string(HyperOrder o) { return o == HyperOrder::kFirst ? "first" : "second"; }

HyperOrder hyper_order_from_string(const std::string& s) {
  if (s == "first") return HyperOrder::kFirst;
  if (s == "second") return HyperOrder::kSecond;
  throw ConfigError("unknown order '" + s + "' (expected first or second)");
}

namespace {

void wfm_problems(const WfmConfig& w, std::vector<std::string>& p) {
  if (w.max_iters < 1) p.push_back("wfm.max_iters must be at least 1");
  if (!(w.tol >= 0.0)) p.push_back("wfm.tol must be nonnegative");
}

void throw_problems(const std::string& what, const std::vector<std::string>& p) {
  if (p.empty()) return;
  std::string msg = "invalid " + what + ":";
  for (const auto& s : p) msg += "\n  - " + s;
  throw ConfigError(msg);
}

void require_finite(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw NumericError("non-finite loss at " + where);
}

std::vector<Sample> gather(std::span<const Sample> all, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

bool is_weight_kind(ParamKind k) {
  return k == ParamKind::kStiefel || k == ParamKind::kSpd || k == ParamKind::kEuclidean;
}

// Independent seeds for the training and validation batch orders.
std::uint64_t val_order_seed(std::uint64_t seed) { return mix64(seed ^ 0x76616c69646174ULL); }

}  // namespace

void check_sample_dims(std::span<const Sample> samples, const ModelConfig& model, const std::string& split) {
  for (const Sample& s : samples) {
    if (s.matrix.rows() != model.input_dim) {
      throw ConfigError("data dimension " + std::to_string(s.matrix.rows()) + " (" + split +
                        " split) does not match the model input dimension " + std::to_string(model.input_dim));
    }
    if (s.label < 0 || s.label >= model.classes) {
      throw ConfigError("label " + std::to_string(s.label) + " (" + split + " split) outside the model's " +
                        std::to_string(model.classes) + " classes");
    }
  }
}

std::vector<std::string> SearchConfig::problems() const {
  std::vector<std::string> p;
  if (!(eta >= 0.0)) p.push_back("eta must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) p.push_back("momentum must lie in [0, 1)");
  if (!(alpha.lr >= 0.0)) p.push_back("alpha.lr must be nonnegative");
  if (!(alpha.beta1 >= 0.0 && alpha.beta1 < 1.0)) p.push_back("alpha.beta1 must lie in [0, 1)");
  if (!(alpha.beta2 >= 0.0 && alpha.beta2 < 1.0)) p.push_back("alpha.beta2 must lie in [0, 1)");
  if (!(alpha.weight_decay >= 0.0)) p.push_back("alpha.weight_decay must be nonnegative");
  if (!(alpha.eps > 0.0)) p.push_back("alpha.eps must be positive");
  if (epochs < 0) p.push_back("epochs must be nonnegative");
  if (batch_size < 1) p.push_back("batch_size must be positive");
  if (top_k < 1) p.push_back("top_k must be positive");
  if (top_k > 2) p.push_back("top_k cannot exceed 2: the first intermediate node has two predecessors");
  if (!(delta_scale > 0.0)) p.push_back("delta_scale must be positive");
  if (workers < 1) p.push_back("workers must be positive");
  wfm_problems(wfm, p);
  return p;
}

void SearchConfig::validate() const { throw_problems("search configuration", problems()); }

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> p;
  if (!(lr >= 0.0)) p.push_back("lr must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) p.push_back("momentum must lie in [0, 1)");
  if (epochs < 0) p.push_back("epochs must be nonnegative");
  if (batch_size < 1) p.push_back("batch_size must be positive");
  if (workers < 1) p.push_back("workers must be positive");
  wfm_problems(wfm, p);
  return p;
}

void TrainConfig::validate() const { throw_problems("train configuration", problems()); }

Objective network_objective(const Network& net, std::span<const Sample> batch, const WfmConfig& wfm,
                            bool with_grad, bool monitor_spd) {
  auto xs = std::make_shared<std::vector<Matrix>>();
  auto ls = std::make_shared<std::vector<int>>();
  for (const Sample& s : batch) {
    xs->push_back(s.matrix);
    ls->push_back(s.label);
  }
  return [&net, xs, ls, wfm, with_grad, monitor_spd](ParamStore& params, NormMode mode) {
    Tape tape;
    ForwardContext ctx(tape, params, mode, wfm);
    ctx.monitor().enabled = monitor_spd;
    const auto logits = net.forward(ctx, *xs);
    const LossValue lv = batch_loss(logits, *ls);
    Evaluation e;
    e.loss = lv.loss.scalar();
    e.correct = lv.correct;
    e.count = xs->size();
    e.min_eig = ctx.monitor().min_eig;
    if (with_grad && std::isfinite(e.loss)) e.grads = ctx.gradients(tape.backward(lv.loss));
    return e;
  };
}

void adam_step(ParamStore& params, const std::vector<Matrix>& grads, const AdamConfig& cfg, AdamState& st) {
  if (grads.size() != params.size()) throw ContractError("adam_step: gradient list does not match the store");
  st.m.resize(params.size());
  st.v.resize(params.size());
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    if (p.kind != ParamKind::kAlpha) continue;
    if (st.m[i].size() == 0) {
      st.m[i] = Matrix::Zero(p.value.rows(), p.value.cols());
      st.v[i] = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    const Matrix g = grads[i] + cfg.weight_decay * p.value;
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const Matrix mhat = st.m[i] / bc1;
    const Matrix vhat = st.v[i] / bc2;
    p.value -= cfg.lr * mhat.cwiseQuotient((vhat.array().sqrt() + cfg.eps).matrix());
  }
}

void weight_step(ParamStore& params, const std::vector<Matrix>& grads, double lr, double momentum,
                 std::vector<Matrix>& momentum_buffers) {
  if (grads.size() != params.size()) throw ContractError("weight_step: gradient list does not match the store");
  momentum_buffers.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    switch (p.kind) {
      case ParamKind::kStiefel: {
        p.value = riem_sgd_step(p.value, grads[i], lr);
        const double err = orthonormality_error(p.value);
        if (!(err <= 1e-10)) {
          throw NumericError("weight_step: '" + p.name + "' left the Stiefel manifold (error " +
                             std::to_string(err) + ")");
        }
        break;
      }
      case ParamKind::kSpd:
        p.value = spd_sgd_step(p.value, grads[i], lr);
        break;
      case ParamKind::kEuclidean: {
        Matrix& buf = momentum_buffers[i];
        if (buf.size() == 0) buf = Matrix::Zero(p.value.rows(), p.value.cols());
        buf = momentum * buf + grads[i];
        p.value -= lr * buf;
        break;
      }
      case ParamKind::kAlpha:
      case ParamKind::kBuffer:
        break;
    }
  }
}

std::vector<Matrix> tangent_gradients(const ParamStore& params, const std::vector<Matrix>& grads) {
  std::vector<Matrix> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = params[i];
    switch (p.kind) {
      case ParamKind::kStiefel:
        out[i] = project_tangent(p.value, grads[i]);
        break;
      case ParamKind::kSpd:
        out[i] = symmetrize(p.value * symmetrize(grads[i]) * p.value);
        break;
      case ParamKind::kEuclidean:
        out[i] = grads[i];
        break;
      default:
        out[i] = Matrix::Zero(p.value.rows(), p.value.cols());
    }
  }
  return out;
}

double joint_norm(const ParamStore& params, const std::vector<Matrix>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (is_weight_kind(params[i].kind) && v[i].size() > 0) s += v[i].squaredNorm();
  }
  return std::sqrt(s);
}

ParamStore perturb(const ParamStore& params, const std::vector<Matrix>& v, double s) {
  ParamStore out = params;
  if (s == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Param& p = out[i];
    if (!is_weight_kind(p.kind) || v[i].size() == 0 || (v[i].array() == 0.0).all()) continue;
    switch (p.kind) {
      case ParamKind::kStiefel:
        p.value = qr_retract(p.value + s * v[i]);
        break;
      case ParamKind::kSpd:
        p.value = exp_map(p.value, s * symmetrize(v[i]));
        break;
      default:
        p.value += s * v[i];
    }
  }
  return out;
}

std::vector<Matrix> mixed_partial_fd(ParamStore& params, const Objective& objective, const std::vector<Matrix>& v,
                                     double delta, int workers) {
  ParamStore plus = perturb(params, v, delta);
  ParamStore minus = perturb(params, v, -delta);
  Evaluation ep, em;
  if (workers > 1) {
    auto fut = std::async(std::launch::async, [&] { return objective(minus, NormMode::kTrainFrozen); });
    ep = objective(plus, NormMode::kTrainFrozen);
    em = fut.get();
  } else {
    ep = objective(plus, NormMode::kTrainFrozen);
    em = objective(minus, NormMode::kTrainFrozen);
  }
  require_finite(ep.loss, "the w+ evaluation");
  require_finite(em.loss, "the w- evaluation");
  std::vector<Matrix> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].kind == ParamKind::kAlpha) {
      out[i] = (ep.grads[i] - em.grads[i]) / (2.0 * delta);
    } else {
      out[i] = Matrix::Zero(params[i].value.rows(), params[i].value.cols());
    }
  }
  return out;
}

HyperResult alpha_hypergradient(ParamStore& params, const Objective& train, const Objective& val,
                                const SearchConfig& cfg) {
  HyperResult r;
  auto alpha_only = [&](const std::vector<Matrix>& g) {
    std::vector<Matrix> out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      out[i] = params[i].kind == ParamKind::kAlpha ? g[i]
                                                   : Matrix::Zero(params[i].value.rows(), params[i].value.cols());
    }
    return out;
  };

  if (cfg.order == HyperOrder::kFirst || cfg.eta == 0.0) {
    const Evaluation ev = val(params, NormMode::kTrainFrozen);
    require_finite(ev.loss, "the validation evaluation");
    r.val_loss = ev.loss;
    r.grads = alpha_only(ev.grads);
    return r;
  }

  const Evaluation tr = train(params, NormMode::kTrainFrozen);
  require_finite(tr.loss, "the virtual-step training evaluation");
  ParamStore virt = perturb(params, tangent_gradients(params, tr.grads), -cfg.eta);
  const Evaluation ev = val(virt, NormMode::kTrainFrozen);
  require_finite(ev.loss, "the validation evaluation at the virtual step");
  r.val_loss = ev.loss;
  r.grads = alpha_only(ev.grads);

  const std::vector<Matrix> gt = tangent_gradients(params, ev.grads);
  r.grad_norm = cfg.ambient_delta_norm ? joint_norm(params, ev.grads) : joint_norm(params, gt);
  if (r.grad_norm < 1e-12) {
    r.second_term_skipped = true;
    log::info("second-order term skipped: validation gradient norm below 1e-12");
    return r;
  }
  r.delta = cfg.delta_scale / r.grad_norm;
  const std::vector<Matrix> fd = mixed_partial_fd(params, train, gt, r.delta, cfg.workers);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].kind == ParamKind::kAlpha) r.grads[i] -= cfg.eta * fd[i];
  }
  return r;
}

std::vector<EdgeSupport> edge_supports(const ParamStore& params, const ModelConfig& model, Activation act) {
  std::vector<EdgeSupport> out;
  std::vector<CellKind> kinds;
  for (const CellConfig& c : model.cells) {
    if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) kinds.push_back(c.kind);
  }
  const auto edges = cell_edges(model.nodes);
  for (CellKind k : kinds) {
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const std::string name = "alpha." + to_string(k) + ".edge" + std::to_string(e);
      const auto idx = params.find(name);
      if (!idx) throw ContractError("edge_supports: missing " + name);
      const Vector w = activate(act, params[*idx].value.col(0));
      out.push_back({k, static_cast<int>(e), static_cast<int>((w.array() > 0.0).count()),
                     static_cast<int>(w.size())});
    }
  }
  return out;
}

std::string alpha_csv_header() { return "epoch,kind,edge,op,logit,weight\n"; }

std::string alpha_csv_rows(int epoch, const ParamStore& params, const ModelConfig& model, Activation act) {
  std::ostringstream os;
  os.precision(17);
  std::vector<CellKind> kinds;
  for (const CellConfig& c : model.cells) {
    if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) kinds.push_back(c.kind);
  }
  const auto edges = cell_edges(model.nodes);
  for (CellKind k : kinds) {
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto idx = params.find("alpha." + to_string(k) + ".edge" + std::to_string(e));
      if (!idx) continue;
      const Vector z = params[*idx].value.col(0);
      const Vector w = activate(act, z);
      const auto cands = candidates(k, edges[e].pred);
      for (Eigen::Index c = 0; c < z.size(); ++c) {
        os << epoch << "," << to_string(k) << "," << e << "," << to_string(cands[static_cast<std::size_t>(c)])
           << "," << z(c) << "," << w(c) << "\n";
      }
    }
  }
  return os.str();
}

EvalResult evaluate(const Network& net, ParamStore& params, std::span<const Sample> samples, const WfmConfig& wfm,
                    int batch_size, int workers) {
  EvalResult r;
  r.count = samples.size();
  if (samples.empty()) return r;
  const auto bs = batches(samples.size(), static_cast<std::size_t>(batch_size), 0, 0, false);
  struct Part {
    double loss_sum = 0.0;
    std::size_t correct = 0;
  };
  auto run = [&](std::size_t b) {
    const std::vector<Sample> batch = gather(samples, bs[b]);
    const Evaluation e = network_objective(net, batch, wfm, false)(params, NormMode::kEval);
    return Part{e.loss * static_cast<double>(e.count), e.correct};
  };
  std::vector<Part> parts(bs.size());
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), bs.size());
  if (nw <= 1) {
    for (std::size_t b = 0; b < bs.size(); ++b) parts[b] = run(b);
  } else {
    std::vector<std::future<void>> futs;
    for (std::size_t w = 0; w < nw; ++w) {
      futs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t b = w; b < bs.size(); b += nw) parts[b] = run(b);
      }));
    }
    for (auto& f : futs) f.get();
  }
  double loss = 0.0;
  std::size_t correct = 0;
  for (const Part& p : parts) {
    loss += p.loss_sum;
    correct += p.correct;
  }
  r.loss = loss / static_cast<double>(samples.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return r;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Smallest eigenvalue over one eval-mode forward of the first batch.
double spot_check(const Network& net, ParamStore& params, std::span<const Sample> samples, const WfmConfig& wfm,
                  int batch_size, const std::string& where) {
  const std::size_t n = std::min<std::size_t>(samples.size(), static_cast<std::size_t>(batch_size));
  const Evaluation e = network_objective(net, samples.subspan(0, n), wfm, false, true)(params, NormMode::kEval);
  if (!(e.min_eig > 0.0)) {
    throw NumericError("SPD spot check failed at " + where + ": smallest eigenvalue " + std::to_string(e.min_eig));
  }
  return e.min_eig;
}

std::string epoch_line(const char* phase, const EpochMetrics& m) {
  std::ostringstream os;
  os << phase << " epoch " << m.epoch << ": train_loss " << m.train_loss << " train_acc " << m.train_acc
     << " val_loss " << m.val_loss << " val_acc " << m.val_acc << " (" << m.seconds << " s)";
  return os.str();
}

}  // namespace

SearchResult search_loop(const Splits& data, const ModelConfig& model, const SearchConfig& cfg,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  model.validate();
  if (data.train.empty() || data.val.empty()) throw DataError("search needs nonempty training and validation splits");
  check_sample_dims(data.train, model, "train");
  check_sample_dims(data.val, model, "validation");

  SearchResult res;
  Rng init = substream(cfg.seed, "init");
  const Network net = Network::supernet(model, res.params, init, cfg.activation);
  ParamStore& params = res.params;
  OptState st;
  res.alpha_csv = alpha_csv_header() + alpha_csv_rows(0, params, model, cfg.activation);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    const auto tb = batches(data.train.size(), bs, cfg.seed, static_cast<std::uint64_t>(epoch));
    const auto vb = batches(data.val.size(), bs, val_order_seed(cfg.seed), static_cast<std::uint64_t>(epoch));
    EpochMetrics m;
    m.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t i = 0; i < tb.size(); ++i) {
      const std::string where = "search epoch " + std::to_string(epoch) + " step " + std::to_string(i + 1);
      const std::vector<Sample> tbatch = gather(data.train, tb[i]);
      const std::vector<Sample> vbatch = gather(data.val, vb[i % vb.size()]);
      const Objective train_obj = network_objective(net, tbatch, cfg.wfm);
      const Objective val_obj = network_objective(net, vbatch, cfg.wfm);

      HyperResult h;
      try {
        h = alpha_hypergradient(params, train_obj, val_obj, cfg);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (" + where + ", architecture step)");
      }
      if (h.second_term_skipped) ++m.second_order_skips;
      adam_step(params, h.grads, cfg.alpha, st.alpha);

      const Evaluation e = train_obj(params, NormMode::kTrain);
      require_finite(e.loss, where + ", weight step");
      weight_step(params, e.grads, cfg.eta, cfg.momentum, st.momentum);
      ++st.steps;
      loss_sum += e.loss * static_cast<double>(e.count);
      correct += e.correct;
      seen += e.count;
      log::debug(where + ": train_loss " + std::to_string(e.loss) + " val_loss " + std::to_string(h.val_loss));
    }
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    const EvalResult v = evaluate(net, params, data.val, cfg.wfm, cfg.batch_size, cfg.workers);
    m.val_loss = v.loss;
    m.val_acc = v.accuracy;
    m.min_eig = spot_check(net, params, data.val, cfg.wfm, cfg.batch_size, "search epoch " + std::to_string(epoch));
    m.seconds = seconds_since(t0);
    res.alpha_csv += alpha_csv_rows(epoch, params, model, cfg.activation);
    res.metrics.push_back(m);
    log::info(epoch_line("search", m));
    if (on_epoch) on_epoch(m);
  }
  res.genotype = derive_genotype(params, model, cfg.activation, cfg.top_k);
  return res;
}

TrainResult train_loop(const Splits& data, const Genotype& genotype, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  const ModelConfig& model = genotype.model;
  model.validate();
  if (data.train.empty()) throw DataError("training needs a nonempty training split");
  check_sample_dims(data.train, model, "train");
  check_sample_dims(data.val, model, "validation");
  check_sample_dims(data.test, model, "test");

  TrainResult res;
  Rng init = substream(cfg.seed, "init");
  const Network net = Network::discrete(genotype, res.params, init);
  ParamStore& params = res.params;
  std::vector<Matrix> momentum;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto tb = batches(data.train.size(), static_cast<std::size_t>(cfg.batch_size), cfg.seed,
                            static_cast<std::uint64_t>(epoch));
    EpochMetrics m;
    m.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t i = 0; i < tb.size(); ++i) {
      const std::vector<Sample> batch = gather(data.train, tb[i]);
      const Evaluation e = network_objective(net, batch, cfg.wfm)(params, NormMode::kTrain);
      require_finite(e.loss, "train epoch " + std::to_string(epoch) + " step " + std::to_string(i + 1));
      weight_step(params, e.grads, cfg.lr, cfg.momentum, momentum);
      loss_sum += e.loss * static_cast<double>(e.count);
      correct += e.correct;
      seen += e.count;
    }
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (!data.val.empty()) {
      const EvalResult v = evaluate(net, params, data.val, cfg.wfm, cfg.batch_size, cfg.workers);
      m.val_loss = v.loss;
      m.val_acc = v.accuracy;
      m.min_eig = spot_check(net, params, data.val, cfg.wfm, cfg.batch_size, "train epoch " + std::to_string(epoch));
    }
    m.seconds = seconds_since(t0);
    res.metrics.push_back(m);
    log::info(epoch_line("train", m));
    if (on_epoch) on_epoch(m);
  }
  res.test = evaluate(net, params, data.test, cfg.wfm, cfg.batch_size, cfg.workers);
  return res;
}

}  // namespace spdnas
