#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spdnas/data.hpp"
#include "spdnas/search_space.hpp"

namespace spdnas {

enum class HyperOrder { kFirst, kSecond };

std::string to_string(HyperOrder o);
HyperOrder hyper_order_from_string(const std::string& s);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 1e-3;
  double eps = 1e-8;
};

struct SearchConfig {
  // Weight learning rate, also the η of the one-step unrolled inner problem.
  double eta = 0.025;
  double momentum = 0.9;
  AdamConfig alpha;
  HyperOrder order = HyperOrder::kSecond;
  int epochs = 10;
  int batch_size = 30;
  int top_k = 2;
  Activation activation = Activation::kSparsemax;
  std::uint64_t seed = 0;
  WfmConfig wfm;
  // δ = delta_scale / ‖g‖.
  double delta_scale = 0.01;
  // Measure ‖g‖ on the raw Euclidean gradient instead of its tangent part.
  bool ambient_delta_norm = false;
  int workers = 1;

  std::vector<std::string> problems() const;
  void validate() const;
};

struct TrainConfig {
  double lr = 0.025;
  double momentum = 0.9;
  int epochs = 50;
  int batch_size = 30;
  std::uint64_t seed = 0;
  WfmConfig wfm;
  int workers = 1;

  std::vector<std::string> problems() const;
  void validate() const;
};

// Loss, accuracy count and Euclidean gradients (aligned with the store) of
// one objective evaluation.
struct Evaluation {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
  std::vector<Matrix> grads;
  double min_eig = 0.0;
};

// An objective of the whole parameter store. Must not mutate parameters
// other than batch-norm buffers in kTrain mode.
using Objective = std::function<Evaluation(ParamStore& params, NormMode mode)>;

// Objective backed by a network and a fixed batch.
Objective network_objective(const Network& net, std::span<const Sample> batch, const WfmConfig& wfm,
                            bool with_grad = true, bool monitor_spd = false);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

struct OptState {
  AdamState alpha;
  std::vector<Matrix> momentum;
  long steps = 0;
};

// Adam on every α entry of the store (weight decay added to the gradient).
void adam_step(ParamStore& params, const std::vector<Matrix>& grads, const AdamConfig& cfg, AdamState& st);

/// Step 2 of the alternation: Riemannian SGD on Stiefel weights (QR
/// retraction), exp-map steps on SPD weights, SGD with momentum on
/// Euclidean weights. Orthonormality is re-checked after each Stiefel step.
void weight_step(ParamStore& params, const std::vector<Matrix>& grads, double lr, double momentum,
                 std::vector<Matrix>& momentum_buffers);

// Riemannian descent direction per weight entry at the current point:
// tangent projection for Stiefel, G sym(∇) G for SPD, the gradient itself
// for Euclidean; zeros for α and buffers.
std::vector<Matrix> tangent_gradients(const ParamStore& params, const std::vector<Matrix>& grads);
// ‖·‖₂ over all weight entries jointly.
double joint_norm(const ParamStore& params, const std::vector<Matrix>& v);
// w + s·v for each weight entry, mapped back by retraction / exp map.
ParamStore perturb(const ParamStore& params, const std::vector<Matrix>& v, double s);

struct HyperResult {
  std::vector<Matrix> grads;  // aligned with the store; α entries filled
  double val_loss = 0.0;
  double grad_norm = 0.0;
  double delta = 0.0;
  bool second_term_skipped = false;
};

/// α hypergradient. First order: ∇_α E_val(w). Second order:
/// ∇_α E_val(w̃) − η (∇_α E_train(w⁺) − ∇_α E_train(w⁻)) / 2δ with
/// w̃ = Ψ(w − η ∇̃ E_train(w)), g = ∇_{w̃} E_val, δ = delta_scale/‖g̃‖ and
/// w± = Ψ(w ± δ g̃). Batch-norm buffers are frozen throughout.
HyperResult alpha_hypergradient(ParamStore& params, const Objective& train, const Objective& val,
                                const SearchConfig& cfg);

// Only the finite-difference estimate (∇_α E(w⁺) − ∇_α E(w⁻)) / 2δ of
// ∇²_{α,w}E·v, exposed for checking against analytic mixed partials.
std::vector<Matrix> mixed_partial_fd(ParamStore& params, const Objective& objective,
                                     const std::vector<Matrix>& v, double delta, int workers = 1);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double min_eig = 0.0;
  double seconds = 0.0;
  std::size_t second_order_skips = 0;
};

struct EdgeSupport {
  CellKind kind;
  int edge;
  int support;
  int candidates;
};

// Support size of the activated α on every edge of every cell kind.
std::vector<EdgeSupport> edge_supports(const ParamStore& params, const ModelConfig& model, Activation act);

// "epoch,kind,edge,op,logit,weight" rows for the current α.
std::string alpha_csv_header();
std::string alpha_csv_rows(int epoch, const ParamStore& params, const ModelConfig& model, Activation act);

struct SearchResult {
  ParamStore params;
  Genotype genotype;
  std::vector<EpochMetrics> metrics;
  std::string alpha_csv;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Alternates per step: α update on a validation batch, then a weight update
/// on a training batch. Aborts with NumericError on a non-finite loss.
SearchResult search_loop(const Splits& data, const ModelConfig& model, const SearchConfig& cfg,
                         const EpochCallback& on_epoch = {});

// ConfigError naming both dimensions (or the offending label) on mismatch.
void check_sample_dims(std::span<const Sample> samples, const ModelConfig& model, const std::string& split);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

// Eval-mode metrics over a sample list, batches fanned out over workers and
// reduced in order.
EvalResult evaluate(const Network& net, ParamStore& params, std::span<const Sample> samples,
                    const WfmConfig& wfm, int batch_size, int workers = 1);

struct TrainResult {
  ParamStore params;
  std::vector<EpochMetrics> metrics;
  EvalResult test;
};

/// Trains the discrete model from a fresh initialization.
TrainResult train_loop(const Splits& data, const Genotype& genotype, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {});

}  // namespace spdnas
