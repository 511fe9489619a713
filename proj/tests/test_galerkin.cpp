#include "doctest.h"

#include <limits>

#include <algorithm>
#include <vector>

#include "blochspec/galerkin.hpp"
#include "blochspec/sample_operators.hpp"

using namespace blochspec;

namespace {

CMat diag2(double a, double b) {
  CMat C = CMat::Zero(2, 2);
  C(0, 0) = a;
  C(1, 1) = b;
  return C;
}

double nearest(const CVec& set, Complex z) {
  double best = 1e300;
  for (Eigen::Index i = 0; i < set.size(); ++i) best = std::min(best, std::abs(set[i] - z));
  return best;
}

}  // namespace

TEST_CASE("free operator matrix is diagonal") {
  const auto G = assemble_matrix(free_operator(2, 1), kPi / 2, 1);
  CHECK(G.dim() == 3);
  const double a = 1.5 * kPi, b = 0.5 * kPi, c = 2.5 * kPi;
  CHECK(std::abs(G.entries(0, 0) + a * a) < 1e-12);
  CHECK(std::abs(G.entries(1, 1) + b * b) < 1e-12);
  CHECK(std::abs(G.entries(2, 2) + c * c) < 1e-12);
  CHECK((G.entries - CMat(G.entries.diagonal().asDiagonal())).norm() == 0.0);
}

TEST_CASE("constant coefficient gives block-diagonal blocks") {
  const CMat C = diag2(1.0, 4.0);
  const double t = 0.3;
  const auto G = assemble_matrix(constant_operator(3, C), t, 2);
  for (int k = -2; k <= 2; ++k) {
    const Complex z = kI * (kTwoPi * k + t);
    const CMat expect = z * z * z * CMat::Identity(2, 2) + z * C;
    const int r = basis_index(k, 0, 2, 2);
    CHECK((G.entries.block(r, r, 2, 2) - expect).norm() < 1e-10);
  }
}

TEST_CASE("single harmonic couples k-1 to k") {
  OperatorSpec spec(3, 2);
  CMat B(2, 2);
  B << 1.0, Complex(0, 2), -3.0, 0.5;
  const double eps = 0.25;
  spec.coefficient(2).set(1, eps * B);
  const double t = -0.7;
  const int K = 3;
  const auto G = assemble_matrix(spec, t, K);
  for (int k = -K + 1; k <= K; ++k) {
    const Complex z = kI * (kTwoPi * (k - 1) + t);
    const CMat blk = G.entries.block(basis_index(k, 0, K, 2), basis_index(k - 1, 0, K, 2), 2, 2);
    CHECK((blk - z * eps * B).norm() < 1e-12);
  }
  CHECK(G.entries.block(basis_index(0, 0, K, 2), basis_index(1, 0, K, 2), 2, 2).norm() == 0.0);
}

TEST_CASE("truncation below the bandwidth is rejected") {
  auto spec = perturbed_operator(0.1);
  spec.coefficient(3).set(3, CMat::Identity(2, 2));
  try {
    assemble_matrix(spec, 0.0, 2);
    FAIL("expected TruncationTooSmall");
  } catch (const ValidationError& e) {
    CHECK(e.kind() == "TruncationTooSmall");
  }
}

TEST_CASE("free eigenpair at t = pi/2") {
  const auto sys = solve_eigensystem(free_operator(2, 1), kPi / 2, 4);
  CHECK(std::abs(sys.lambda[0] + kPi * kPi / 4) < 1e-12);
  const auto pair = sys.pair(0);
  CHECK(std::abs(std::abs(pair.psi[basis_index(0, 0, 4, 1)]) - 1.0) < 1e-14);
  for (int p = 0; p < sys.size(); ++p) CHECK(std::abs(sys.alpha[p] - 1.0) < 1e-14);
}

TEST_CASE("constant-C eigenvalue at t = pi, k = 0, j = 1") {
  const auto sys = solve_eigensystem(constant_operator(3, diag2(1.0, 4.0)), kPi, 6);
  const Complex expect(0.0, kPi - kPi * kPi * kPi);
  CHECK(std::abs(expect.imag() + 27.86472) < 1e-4);
  CHECK(nearest(sys.lambda, expect) < 1e-10 * std::abs(expect));
}

TEST_CASE("constant-C eigenvalues are exact for every retained mode") {
  const auto spec = constant_operator(3, diag2(1.0, 4.0));
  const auto mean = compute_mean_matrix(spec);
  const int K = 16;
  for (double t : {-3.0, -0.4, 0.0, 1.0, 2.9}) {
    const auto sys = solve_eigensystem(spec, t, K);
    for (int k = -K; k <= K; ++k)
      for (int j = 0; j < 2; ++j) {
        const Complex ref = leading_term(3, k, t, mean.mu[j]);
        CHECK(nearest(sys.lambda, ref) <= 1e-10 * std::abs(ref) + 1e-12);
      }
  }
}

TEST_CASE("reference eigenpairs") {
  const auto spec = constant_operator(3, diag2(1.0, 4.0));
  const auto free_pair = reference_eigenpair(free_operator(2, 1), 0, 0, kPi / 2, Reference::free);
  CHECK(std::abs(free_pair.lambda + kPi * kPi / 4) < 1e-13);
  CHECK(std::abs(free_pair.alpha - 1.0) == 0.0);
  for (int j = 0; j < 2; ++j) {
    const auto pr = reference_eigenpair(spec, 1, j, 0.0, Reference::constantC);
    const double mu = j == 0 ? 1.0 : 4.0;
    const Complex expect(0.0, -8.0 * kPi * kPi * kPi + kTwoPi * mu);
    CHECK(std::abs(pr.lambda - expect) < 1e-10 * std::abs(expect));
    CHECK(std::abs(pr.psi[basis_index(1, j, 1, 2)] - 1.0) < 1e-15);
    const auto G = assemble_matrix(spec, 0.0, 1);
    CHECK((G.entries * pr.psi - pr.lambda * pr.psi).norm() < 1e-10 * std::abs(pr.lambda));
  }
}

TEST_CASE("self-convergence of the perturbed example between K = 24 and K = 32") {
  const auto spec = perturbed_operator(0.1);
  const auto a = solve_eigensystem(spec, 1.0, 24);
  const auto b = solve_eigensystem(spec, 1.0, 32);
  const double cutoff = std::pow(kTwoPi * 8.5, 3);
  // a dense solver resolves eigenvalues only to about eps ||G||; small |lambda| sit at that floor
  const double floor = 4.0 * std::numeric_limits<double>::epsilon() * std::pow(kTwoPi * 32, 3);
  double worst = 0.0;
  for (int p = 0; p < a.size(); ++p) {
    if (std::abs(a.lambda[p]) > cutoff) continue;
    worst = std::max(worst, nearest(b.lambda, a.lambda[p]) / (std::abs(a.lambda[p]) + floor / 1e-10));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("eigenpair invariants on the perturbed example") {
  const auto spec = perturbed_operator(0.1);
  const int K = 20;
  const auto G = assemble_matrix(spec, 0.6, K);
  const auto sys = solve_eigensystem(G, 3);
  const double scale = G.entries.norm();
  for (int p = 0; p < sys.size(); ++p) {
    CHECK(std::abs(sys.right.col(p).norm() - 1.0) < 1e-12);
    CHECK(std::abs(sys.left.col(p).norm() - 1.0) < 1e-12);
    CHECK(std::abs(sys.alpha[p]) <= 1.0 + 1e-12);
    CHECK((G.entries * sys.right.col(p) - sys.lambda[p] * sys.right.col(p)).norm() < 1e-10 * scale);
    CHECK((G.entries.adjoint() * sys.left.col(p) - std::conj(sys.lambda[p]) * sys.left.col(p)).norm() <
          1e-10 * scale);
  }
  // biorthogonality (Psi_p, X_q) = X_q^H Psi_p
  double worst = 0.0;
  for (int p = 0; p < sys.size(); ++p) {
    for (int q = 0; q < sys.size(); ++q) {
      const Complex ip = sys.X(q).dot(sys.right.col(p));
      worst = std::max(worst, std::abs(ip - (p == q ? 1.0 : 0.0)));
    }
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("Jordan-type perturbation: |alpha| = 2 sqrt(d) / (1 + d)") {
  for (double d : {1e-2, 1e-4, 1e-6}) {
    GalerkinMatrix G{0.0, 0, 2, CMat::Zero(2, 2)};
    G.entries(0, 1) = 1.0;
    G.entries(1, 0) = d;
    const auto sys = solve_eigensystem(G, 2);
    const double expect = 2.0 * std::sqrt(d) / (1.0 + d);
    for (int p = 0; p < 2; ++p) CHECK(std::abs(std::abs(sys.alpha[p]) - expect) < 1e-8 * expect);
  }
}

TEST_CASE("quasi-periodic extension of eigenfunctions") {
  const auto fp = solve_eigensystem(free_operator(2, 1), kPi / 2, 3).pair(0);
  std::vector<double> xs, xs1;
  for (int i = 0; i < 17; ++i) {
    xs.push_back(-1.3 + 0.2 * i);
    xs1.push_back(-0.3 + 0.2 * i);
  }
  const CMat a = evaluate_eigenfunction(fp, xs);
  const CMat b = evaluate_eigenfunction(fp, xs1);
  for (int i = 0; i < 17; ++i) CHECK(std::abs(b(0, i) / a(0, i) - kI) < 1e-12);

  const auto pp = solve_eigensystem(perturbed_operator(0.1), 1.3, 12).pair(7);
  const CMat c = evaluate_eigenfunction(pp, xs);
  const CMat d = evaluate_eigenfunction(pp, xs1);
  for (int i = 0; i < 17; ++i)
    for (int j = 0; j < 2; ++j) CHECK(std::abs(std::abs(d(j, i)) - std::abs(c(j, i))) < 1e-12);
}

TEST_CASE("band-limited synthesis survives resampling from 64 to 128 points") {
  const int K = 24;
  const double t = 1.3;
  const auto pair = solve_eigensystem(perturbed_operator(0.1), t, K).pair(11);
  std::vector<double> coarse(64), fine(128);
  for (int i = 0; i < 64; ++i) coarse[static_cast<std::size_t>(i)] = i / 64.0;
  for (int i = 0; i < 128; ++i) fine[static_cast<std::size_t>(i)] = i / 128.0;
  const CMat c = synthesize(pair.psi, t, K, 2, coarse);
  // recover the coefficients from the 64 samples by a DFT of e^{-itx} Psi
  CVec rec = CVec::Zero(pair.psi.size());
  for (int k = -K; k <= K; ++k)
    for (int j = 0; j < 2; ++j) {
      Complex acc = 0.0;
      for (int i = 0; i < 64; ++i) acc += c(j, i) * std::exp(-kI * (kTwoPi * k + t) * coarse[static_cast<std::size_t>(i)]);
      rec[basis_index(k, j, K, 2)] = acc / 64.0;
    }
  const CMat direct = synthesize(pair.psi, t, K, 2, fine);
  const CMat resampled = synthesize(rec, t, K, 2, fine);
  CHECK((direct - resampled).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("e(t) closed form") {
  CHECK(e_norm(1.0) == 1.0);
  const double b = 0.4;
  const double inv_sq = (std::exp(-2 * b) - 1.0) / (-2 * b);
  CHECK(std::abs(e_norm(Complex(0.3, b)) - 1.0 / std::sqrt(inv_sq)) < 1e-15);
}
