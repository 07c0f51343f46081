#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "spdnas/bilevel.hpp"
#include "spdnas/error.hpp"
#include "spdnas/stiefel.hpp"

using namespace spdnas;
using spdnas::testing::max_abs_diff;

namespace {

// E_train = ½‖w‖² + wᵀBα,  E_val = cᵀw + wᵀCα.
// Bilinear in (w, α), so the central difference of ∇_α E_train is exact.
struct Toy {
  Matrix b, c_mat;
  Vector c;

  ParamStore store(const Vector& w, const Vector& alpha) const {
    ParamStore ps;
    ps.get_or_add("w", ParamKind::kEuclidean, w);
    ps.get_or_add("alpha", ParamKind::kAlpha, alpha);
    return ps;
  }

  Objective train() const {
    return [this](ParamStore& ps, NormMode) {
      const Vector w = ps[0].value, a = ps[1].value;
      Evaluation e;
      e.loss = 0.5 * w.squaredNorm() + w.dot(b * a);
      e.grads = {w + b * a, b.transpose() * w};
      e.count = 1;
      return e;
    };
  }

  Objective val() const {
    return [this](ParamStore& ps, NormMode) {
      const Vector w = ps[0].value, a = ps[1].value;
      Evaluation e;
      e.loss = c.dot(w) + w.dot(c_mat * a);
      e.grads = {c + c_mat * a, c_mat.transpose() * w};
      e.count = 1;
      return e;
    };
  }
};

Toy make_toy(Rng& rng) {
  return {random_gaussian(3, 2, rng), random_gaussian(3, 2, rng), random_gaussian(3, 1, rng)};
}

}  // namespace

TEST_SUITE("bilevel") {
  TEST_CASE("second-order hypergradient matches the closed form on a bilinear toy") {
    Rng rng = substream(1, "toy");
    const Toy toy = make_toy(rng);
    const Vector w = random_gaussian(3, 1, rng), a = random_gaussian(2, 1, rng);
    ParamStore ps = toy.store(w, a);
    SearchConfig cfg;
    cfg.eta = 0.1;
    const HyperResult r = alpha_hypergradient(ps, toy.train(), toy.val(), cfg);
    const Vector w_virtual = w - cfg.eta * (w + toy.b * a);
    const Vector g = toy.c + toy.c_mat * a;
    const Vector expect = toy.c_mat.transpose() * w_virtual - cfg.eta * toy.b.transpose() * g;
    CHECK(max_abs_diff(r.grads[1], expect) <= 1e-8);
    CHECK(r.grad_norm == doctest::Approx(g.norm()));
    CHECK(r.delta == doctest::Approx(0.01 / g.norm()));
    CHECK(r.grads[0].norm() == 0.0);
    // Parameters are untouched.
    CHECK(ps[0].value == Matrix(w));
    CHECK(ps[1].value == Matrix(a));
  }

  TEST_CASE("delta is 0.005 when the gradient norm is 2") {
    Rng rng = substream(2, "delta");
    Toy toy = make_toy(rng);
    toy.c_mat.setZero();
    toy.c = Vector::Zero(3);
    toy.c(1) = 2.0;
    ParamStore ps = toy.store(random_gaussian(3, 1, rng), random_gaussian(2, 1, rng));
    const HyperResult r = alpha_hypergradient(ps, toy.train(), toy.val(), SearchConfig{});
    CHECK(r.grad_norm == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(r.delta == doctest::Approx(0.005).epsilon(1e-14));
  }

  TEST_CASE("eta = 0 reduces to the first-order gradient") {
    Rng rng = substream(3, "eta0");
    const Toy toy = make_toy(rng);
    ParamStore ps = toy.store(random_gaussian(3, 1, rng), random_gaussian(2, 1, rng));
    SearchConfig second;
    second.eta = 0.0;
    SearchConfig first = second;
    first.order = HyperOrder::kFirst;
    const HyperResult a = alpha_hypergradient(ps, toy.train(), toy.val(), second);
    const HyperResult b = alpha_hypergradient(ps, toy.train(), toy.val(), first);
    CHECK(max_abs_diff(a.grads[1], b.grads[1]) <= 1e-12);
    CHECK(max_abs_diff(b.grads[1], toy.c_mat.transpose() * ps[0].value) <= 1e-14);
  }

  TEST_CASE("zero validation gradient skips the second term") {
    Rng rng = substream(4, "skip");
    Toy toy = make_toy(rng);
    toy.c_mat.setZero();
    toy.c.setZero();
    ParamStore ps = toy.store(random_gaussian(3, 1, rng), random_gaussian(2, 1, rng));
    const HyperResult r = alpha_hypergradient(ps, toy.train(), toy.val(), SearchConfig{});
    CHECK(r.second_term_skipped);
    CHECK(r.grads[1].norm() == 0.0);
  }

  TEST_CASE("mixed partial estimate on the toy") {
    Rng rng = substream(5, "mixed");
    const Toy toy = make_toy(rng);
    ParamStore ps = toy.store(random_gaussian(3, 1, rng), random_gaussian(2, 1, rng));
    const std::vector<Matrix> v = {random_gaussian(3, 1, rng), Matrix::Zero(2, 1)};
    const auto h = mixed_partial_fd(ps, toy.train(), v, 1e-3);
    CHECK(max_abs_diff(h[1], toy.b.transpose() * v[0]) <= 1e-9);
  }

  TEST_CASE("adam first step moves each coordinate by about lr") {
    ParamStore ps;
    ps.get_or_add("alpha", ParamKind::kAlpha, Matrix::Zero(3, 1));
    ps.get_or_add("w", ParamKind::kEuclidean, Matrix::Ones(2, 1));
    Matrix g(3, 1);
    g << 0.2, -5.0, 0.0;
    AdamState st;
    const AdamConfig cfg;
    adam_step(ps, {g, Matrix::Ones(2, 1)}, cfg, st);
    CHECK(ps[0].value(0, 0) == doctest::Approx(-3e-4).epsilon(1e-6));
    CHECK(ps[0].value(1, 0) == doctest::Approx(3e-4).epsilon(1e-6));
    CHECK(ps[0].value(2, 0) == 0.0);
    CHECK(ps[1].value == Matrix::Ones(2, 1));
    CHECK(st.step == 1);
    CHECK_THROWS_AS(adam_step(ps, {g}, cfg, st), ContractError);
  }

  TEST_CASE("weight step per manifold") {
    Rng rng = substream(6, "wstep");
    ParamStore ps;
    ps.get_or_add("W", ParamKind::kStiefel, random_stiefel(6, 3, rng));
    ps.get_or_add("G", ParamKind::kSpd, random_spd(3, rng));
    ps.get_or_add("b", ParamKind::kEuclidean, Matrix::Zero(2, 1));
    ps.get_or_add("alpha", ParamKind::kAlpha, Matrix::Zero(2, 1));
    const std::vector<Matrix> grads = {random_gaussian(6, 3, rng), random_symmetric(3, rng), Matrix::Ones(2, 1),
                                       Matrix::Ones(2, 1)};
    std::vector<Matrix> bufs;
    for (int t = 0; t < 3; ++t) weight_step(ps, grads, 0.1, 0.9, bufs);
    CHECK(orthonormality_error(ps[0].value) <= 1e-10);
    CHECK(is_spd(ps[1].value));
    // buf = 1, 1.9, 2.71 → total step 0.1·5.61.
    CHECK(ps[2].value(0, 0) == doctest::Approx(-0.561).epsilon(1e-12));
    CHECK(ps[3].value.norm() == 0.0);
  }

  TEST_CASE("tangent gradients, joint norm and perturb") {
    Rng rng = substream(7, "tangent");
    ParamStore ps;
    ps.get_or_add("W", ParamKind::kStiefel, random_stiefel(5, 2, rng));
    ps.get_or_add("b", ParamKind::kEuclidean, Matrix::Zero(2, 1));
    ps.get_or_add("alpha", ParamKind::kAlpha, Matrix::Zero(2, 1));
    const std::vector<Matrix> grads = {random_gaussian(5, 2, rng), (Matrix(2, 1) << 3, 4).finished(),
                                       Matrix::Ones(2, 1)};
    const auto t = tangent_gradients(ps, grads);
    CHECK(max_abs_diff(t[0], project_tangent(ps[0].value, grads[0])) == 0.0);
    CHECK(t[2].norm() == 0.0);
    CHECK(joint_norm(ps, t) == doctest::Approx(std::sqrt(t[0].squaredNorm() + 25.0)));
    const ParamStore moved = perturb(ps, t, 0.01);
    CHECK(orthonormality_error(moved[0].value) <= 1e-12);
    CHECK(max_abs_diff(moved[1].value, 0.01 * grads[1]) <= 1e-15);
    CHECK(moved[2].value == ps[2].value);
  }

  TEST_CASE("config problems and enum names") {
    SearchConfig s;
    s.eta = -1.0;
    s.batch_size = 0;
    s.top_k = 3;
    CHECK(s.problems().size() == 3);
    CHECK_THROWS_AS(s.validate(), ConfigError);
    TrainConfig t;
    t.epochs = -1;
    CHECK(t.problems().size() == 1);
    CHECK(hyper_order_from_string(to_string(HyperOrder::kFirst)) == HyperOrder::kFirst);
    CHECK_THROWS_AS(hyper_order_from_string("third"), ConfigError);
  }

  TEST_CASE("sample dimension checks name both sides") {
    ModelConfig m;
    const std::vector<Sample> s = {{Matrix::Identity(5, 5), 0}};
    try {
      check_sample_dims(s, m, "train");
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("5") != std::string::npos);
      CHECK(msg.find("20") != std::string::npos);
    }
    const std::vector<Sample> bad_label = {{Matrix::Identity(20, 20), 7}};
    CHECK_THROWS_AS(check_sample_dims(bad_label, m, "val"), ConfigError);
  }

  TEST_CASE("short search on a small problem is deterministic") {
    SynthConfig sc;
    sc.dim = 6;
    sc.per_class = 8;
    sc.seed = 11;
    const Dataset d = synth_generate(sc);
    SplitSpec sp;
    sp.seed = 11;
    const Splits splits = stratified_split(d, sp);
    ModelConfig m;
    m.input_dim = 6;
    m.nodes = 4;
    m.cells = {{CellKind::kReduction, 0, 2}};
    SearchConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 6;
    cfg.seed = 11;
    const SearchResult a = search_loop(splits, m, cfg);
    const SearchResult b = search_loop(splits, m, cfg);
    CHECK(a.alpha_csv == b.alpha_csv);
    CHECK(genotype_to_json(a.genotype) == genotype_to_json(b.genotype));
    REQUIRE(a.metrics.size() == 1);
    CHECK(std::isfinite(a.metrics[0].train_loss));
    for (std::size_t i = 0; i < a.params.size(); ++i) {
      if (a.params[i].kind == ParamKind::kStiefel) CHECK(orthonormality_error(a.params[i].value) <= 1e-10);
    }
    for (const EdgeSupport& e : edge_supports(a.params, m, cfg.activation)) {
      CHECK(e.support >= 1);
      CHECK(e.support <= e.candidates);
    }
  }
}
