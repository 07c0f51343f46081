#include <cmath>

#include "helpers.hpp"
#include "spdnas/error.hpp"
#include "spdnas/simplex.hpp"

using namespace spdnas;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

int support(const Vector& p) { return static_cast<int>((p.array() > 0.0).count()); }

}  // namespace

TEST_SUITE("simplex") {
  TEST_CASE("sparsemax examples") {
    CHECK((sparsemax(vec({0.7, 0.3})) - vec({0.7, 0.3})).norm() < 1e-15);
    for (double t : {-3.0, 0.0, 2.5}) {
      CHECK((sparsemax(vec({t, t, t})) - Vector::Constant(3, 1.0 / 3)).norm() < 1e-15);
    }
    const Vector p = sparsemax(vec({2.0, 0.0}));
    CHECK(p(0) == 1.0);
    CHECK(p(1) == 0.0);
    CHECK_THROWS_AS(sparsemax(Vector()), ContractError);
  }

  TEST_CASE("sparsemax output lies on the simplex and is translation invariant") {
    Rng rng = substream(1, "sm");
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
      Vector z(5);
      // On a 2^-20 grid so that adding the shift below is exact.
      for (Eigen::Index i = 0; i < 5; ++i) z(i) = std::ldexp(std::round(std::ldexp(n(rng), 20)), -20);
      const Vector p = sparsemax(z);
      CHECK(p.minCoeff() >= 0.0);
      CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-14));
      const Vector shifted = sparsemax((z.array() + 7.25).matrix());
      CHECK(shifted == p);
    }
  }

  TEST_CASE("sparsemax vjp") {
    const Vector z = vec({0.2, 0.1, 0.3, 0.15});
    const Vector p = sparsemax(z);
    REQUIRE(support(p) == 4);
    const Vector v = vec({1.0, -2.0, 0.5, 3.0});
    CHECK((sparsemax_vjp(p, v) - (v.array() - v.mean()).matrix()).norm() < 1e-14);
    const Vector single = sparsemax(vec({5.0, 0.0, 0.0}));
    CHECK(sparsemax_vjp(single, vec({1.0, 2.0, 3.0})).norm() == 0.0);
  }

  TEST_CASE("softmax and normalized sigmoid") {
    CHECK((softmax(vec({0.0, 0.0})) - vec({0.5, 0.5})).norm() < 1e-15);
    CHECK((normalized_sigmoid(vec({0.4, 0.4, 0.4})) - Vector::Constant(3, 1.0 / 3)).norm() < 1e-15);
    CHECK(softmax(vec({800.0, 0.0})).allFinite());
    CHECK(softmax(vec({3.0, 0.0, 0.0})).minCoeff() > 0.0);
    CHECK(support(softmax(vec({3.0, 0.0, 0.0}))) == 3);
    CHECK(support(sparsemax(vec({3.0, 0.0, 0.0}))) == 1);
  }

  TEST_CASE("vjps match finite differences") {
    Rng rng = substream(2, "vjp");
    std::normal_distribution<double> n(0.0, 0.5);
    for (Activation a : {Activation::kSparsemax, Activation::kSoftmax, Activation::kSigmoid}) {
      Vector z(4), v(4);
      for (Eigen::Index i = 0; i < 4; ++i) {
        z(i) = n(rng);
        v(i) = n(rng);
      }
      const Vector out = activate(a, z);
      const Vector g = activate_vjp(a, z, out, v);
      for (Eigen::Index i = 0; i < 4; ++i) {
        Vector zp = z, zm = z;
        zp(i) += 1e-6;
        zm(i) -= 1e-6;
        const double fd = (v.dot(activate(a, zp)) - v.dot(activate(a, zm))) / 2e-6;
        CHECK(g(i) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
      }
    }
  }

  TEST_CASE("activation names") {
    for (Activation a : {Activation::kSparsemax, Activation::kSoftmax, Activation::kSigmoid}) {
      CHECK(activation_from_string(to_string(a)) == a);
    }
    CHECK_THROWS_AS(activation_from_string("relu"), ConfigError);
  }
}
