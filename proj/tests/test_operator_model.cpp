#include "doctest.h"

#include "blochspec/galerkin.hpp"
#include "blochspec/operator_model.hpp"
#include "blochspec/sample_operators.hpp"

using namespace blochspec;

namespace {

CMat mat2(Complex a, Complex b, Complex c, Complex d) {
  CMat M(2, 2);
  M << a, b, c, d;
  return M;
}

}  // namespace

TEST_CASE("mean matrix of a constant diagonal coefficient") {
  const auto spec = constant_operator(3, mat2(1.0, 0.0, 0.0, 4.0));
  const auto mean = compute_mean_matrix(spec);
  CHECK(mean.simple);
  CHECK(std::abs(mean.mu[0] - 1.0) < 1e-14);
  CHECK(std::abs(mean.mu[1] - 4.0) < 1e-14);
  CHECK((mean.v - CMat::Identity(2, 2)).norm() < 1e-14);
  CHECK((mean.u - CMat::Identity(2, 2)).norm() < 1e-14);
}

TEST_CASE("oscillating harmonics do not change the mean") {
  OperatorSpec spec(3, 2);
  const CMat C0 = mat2(2.0, 1.0, 0.0, -1.0);
  spec.coefficient(2).set(0, C0);
  spec.coefficient(2).set(1, mat2(Complex(0.3, 1.0), 2.0, -1.0, 0.5));
  CHECK((compute_mean_matrix(spec).C - C0).norm() == 0.0);
}

TEST_CASE("swap matrix mean: eigenpairs against the 2x2 closed form") {
  OperatorSpec spec(2, 2);
  spec.coefficient(2).set(0, mat2(0.0, 1.0, 1.0, 0.0));
  spec.coefficient(2).set(1, 0.15 * CMat::Identity(2, 2));
  spec.coefficient(2).set(-1, 0.15 * CMat::Identity(2, 2));
  const auto mean = compute_mean_matrix(spec);
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(mean.mu[0] + 1.0) < 1e-14);
  CHECK(std::abs(mean.mu[1] - 1.0) < 1e-14);
  CHECK(std::abs(mean.v(0, 0) - s) < 1e-14);
  CHECK(std::abs(mean.v(1, 0) + s) < 1e-14);
  CHECK(std::abs(mean.v(0, 1) - s) < 1e-14);
  CHECK(std::abs(mean.v(1, 1) - s) < 1e-14);
}

TEST_CASE("mean matrix invariants on a random non-normal C") {
  OperatorSpec spec(3, 3);
  CMat C(3, 3);
  C << Complex(1, 2), 0.5, Complex(0, -1), 3.0, Complex(-2, 0.1), 1.0, 0.2, Complex(0.7, 0.7), 4.0;
  spec.coefficient(2).set(0, C);
  const auto mean = compute_mean_matrix(spec);
  REQUIRE(mean.simple);
  for (int j = 0; j < 3; ++j) {
    CHECK((C * mean.v.col(j) - mean.mu[j] * mean.v.col(j)).norm() < 1e-12);
    CHECK((C.adjoint() * mean.u.col(j) - std::conj(mean.mu[j]) * mean.u.col(j)).norm() < 1e-12);
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(mean.u.col(i).dot(mean.v.col(j)) - (i == j ? 1.0 : 0.0)) < 1e-12);
  }
}

TEST_CASE("zero-frequency extraction equals the grid average") {
  const auto spec = perturbed_operator(0.1);
  const int N = 8;
  CMat avg = CMat::Zero(2, 2);
  for (int i = 0; i < N; ++i) avg += spec.coefficient(2)(static_cast<double>(i) / N);
  avg /= N;
  CHECK((avg - compute_mean_matrix(spec).C).norm() < 1e-15);
}

TEST_CASE("degenerate mean matrix halts unless forced") {
  const auto spec = constant_operator(3, CMat::Identity(2, 2));
  CHECK_THROWS_AS(compute_mean_matrix(spec), NumericalError);
  const auto mean = compute_mean_matrix(spec, true);
  CHECK_FALSE(mean.simple);
}

TEST_CASE("reduction with p1 = 0 is the identity") {
  const auto spec = perturbed_operator(0.1);
  const auto red = reduce_p1(spec);
  CHECK(red.r == Complex(0.0, 0.0));
  CHECK(red.q.is_zero());
  for (int nu = 2; nu <= 3; ++nu) {
    for (const auto& [q, M] : spec.coefficient(nu).coeffs())
      CHECK((red.reduced.coefficient(nu).coeff(q) - M).norm() == 0.0);
  }
}

TEST_CASE("reduction n = 2 with constant p1") {
  const Complex c(0.7, -0.4);
  OperatorSpec spec(2, 1);
  spec.p1 = ScalarFourier::constant(c);
  spec.coefficient(2).set(0, CMat::Constant(1, 1, 3.0));
  const auto red = reduce_p1(spec);
  CHECK(std::abs(red.r - c / 2.0) < 1e-15);
  CHECK(red.q.bandwidth() == 0);
  CHECK(std::abs(red.q.mean() + c * c / 4.0) < 1e-15);
  CHECK(std::abs(red.reduced.coefficient(2).coeff(0)(0, 0) - (3.0 - c * c / 4.0)) < 1e-15);
  CHECK(red.reduced.p1.is_zero());
}

TEST_CASE("reduction n = 3 with zero-mean p1 = i sin(2 pi x)") {
  OperatorSpec spec = perturbed_operator(0.1);
  // i sin(2 pi x) = (e^{2 pi i x} - e^{-2 pi i x}) / 2
  spec.p1.set(1, 0.5);
  spec.p1.set(-1, -0.5);
  const auto red = reduce_p1(spec);
  CHECK(std::abs(red.r) == 0.0);
  CHECK(red.q.bandwidth() > 0);
  // q = -(n-1)/2 p1' - (n-1) p1^2 / (2n) for n = 3
  const double x = 0.37;
  const Complex p1 = spec.p1(x);
  const Complex dp1 = spec.p1.derivative()(x);
  CHECK(std::abs(red.q(x) - (-dp1 - p1 * p1 / 3.0)) < 1e-13);
  const CMat lhs = red.reduced.coefficient(2)(x);
  const CMat rhs = red.q(x) * CMat::Identity(2, 2) + spec.coefficient(2)(x);
  CHECK((lhs - rhs).norm() < 1e-13);
}

TEST_CASE("reduced spectrum at the shifted quasimomentum matches the original") {
  OperatorSpec spec = damped_operator(0.1);
  spec.p1.set(1, Complex(0.2, 0.1));
  spec.p1.set(-1, Complex(-0.1, 0.3));
  const auto red = reduce_p1(spec);
  const int K = 24;
  const double t = 0.8;
  const auto a = solve_eigensystem(spec, t, K);
  const auto b = solve_eigensystem(red.reduced, red.shifted(t), K);
  for (int p = 0; p < 20; ++p) {
    double best = 1e300;
    for (int q = 0; q < b.size(); ++q) best = std::min(best, std::abs(a.lambda[p] - b.lambda[q]));
    CHECK(best < 1e-8 * (1.0 + std::abs(a.lambda[p])));
  }
}

TEST_CASE("condition classification") {
  SUBCASE("n odd, distinct diagonal") {
    const auto spec = constant_operator(3, mat2(1.0, 0.0, 0.0, 4.0));
    const auto rep = classify_conditions(spec, compute_mean_matrix(spec), reduce_p1(spec));
    CHECK(rep.condition1);
    CHECK(rep.asymptotically_spectral_expected);
  }
  SUBCASE("n = 2 with p1 = 1 + i") {
    OperatorSpec spec(2, 1);
    spec.p1 = ScalarFourier::constant(Complex(1.0, 1.0));
    spec.coefficient(2).set(0, CMat::Zero(1, 1));
    const auto red = reduce_p1(spec);
    CHECK(std::abs(red.r - Complex(0.5, 0.5)) < 1e-15);
    const auto rep = classify_conditions(spec, compute_mean_matrix(spec), red);
    CHECK(std::abs(rep.n_r.real() - 1.0) < 1e-15);
    CHECK(rep.condition2);
  }
  SUBCASE("n = 2 with p1 = 0 is the excluded case") {
    const auto spec = free_operator(2, 1);
    const auto rep = classify_conditions(spec, compute_mean_matrix(spec), reduce_p1(spec));
    CHECK_FALSE(rep.condition2);
    CHECK_FALSE(rep.asymptotically_spectral_expected);
    CHECK(rep.note.find("excluded") != std::string::npos);
  }
}

TEST_CASE("operator JSON round trip and rejection of unknown fields") {
  const auto spec = damped_operator(0.1);
  const auto doc = operator_to_json(spec);
  const auto back = operator_from_json(doc);
  CHECK(back.n == 2);
  CHECK(back.m == 2);
  CHECK(std::abs(back.p1.mean() - 1.0) == 0.0);
  CHECK((back.coefficient(2).coeff(1) - spec.coefficient(2).coeff(1)).norm() == 0.0);

  auto bad = doc;
  bad["colour"] = 1;
  try {
    operator_from_json(bad);
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(e.kind() == "ConfigInvalid");
    CHECK(e.path().find("colour") != std::string::npos);
  }

  auto bad_shape = doc;
  bad_shape["P"]["2"][0][1] = nlohmann::json::array({{1.0, 0.0}});
  CHECK_THROWS_AS(operator_from_json(bad_shape), ValidationError);
}
