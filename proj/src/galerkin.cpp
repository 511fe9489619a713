#include "blochspec/galerkin.hpp"

#include <algorithm>
#include <numeric>

#include "blochspec/parallel.hpp"

#include <lapacke.h>

namespace blochspec {

double e_norm(Complex t) {
  const double b = t.imag();
  if (b == 0.0) return 1.0;
  const double inv_sq = std::expm1(-2.0 * b) / (-2.0 * b);
  return 1.0 / std::sqrt(inv_sq);
}

Complex leading_term(int n, int k, Complex t, Complex mu) {
  const Complex z = kI * (kTwoPi * k + t);
  return std::pow(z, n) + mu * std::pow(z, n - 2);
}

GalerkinMatrix assemble_matrix(const OperatorSpec& spec, Complex t, int K) {
  spec.validate();
  const int qmax = spec.max_bandwidth();
  if (K < qmax)
    throw ValidationError("TruncationTooSmall", "truncation K = " + std::to_string(K) +
                                                    " is below the coefficient bandwidth " + std::to_string(qmax),
                          "K");
  const int n = spec.n;
  const int m = spec.m;
  const int dim = m * (2 * K + 1);
  GalerkinMatrix G{t, K, m, CMat::Zero(dim, dim)};

  std::vector<Complex> pw(static_cast<std::size_t>(n + 1));
  for (int kc = -K; kc <= K; ++kc) {
    const Complex z = kI * (kTwoPi * kc + t);
    pw[0] = 1.0;
    for (int d = 1; d <= n; ++d) pw[static_cast<std::size_t>(d)] = pw[static_cast<std::size_t>(d - 1)] * z;
    const int col0 = basis_index(kc, 0, K, m);

    for (int i = 0; i < m; ++i) G.entries(col0 + i, col0 + i) += pw[static_cast<std::size_t>(n)];

    for (const auto& [q, c] : spec.p1.coeffs()) {
      const int kr = kc + q;
      if (kr < -K || kr > K) continue;
      const int row0 = basis_index(kr, 0, K, m);
      for (int i = 0; i < m; ++i) G.entries(row0 + i, col0 + i) += c * pw[static_cast<std::size_t>(n - 1)];
    }

    for (int nu = 2; nu <= n; ++nu) {
      for (const auto& [q, mat] : spec.coefficient(nu).coeffs()) {
        const int kr = kc + q;
        if (kr < -K || kr > K) continue;
        const int row0 = basis_index(kr, 0, K, m);
        G.entries.block(row0, col0, m, m) += mat * pw[static_cast<std::size_t>(n - nu)];
      }
    }
  }
  return G;
}

BlochEigenpair EigenSystem::pair(int p) const {
  BlochEigenpair out;
  out.p = p;
  out.t = t;
  out.K = K;
  out.m = m;
  out.lambda = lambda[p];
  out.psi = right.col(p);
  out.psi_star = left.col(p);
  out.alpha = alpha[p];
  out.flagged = flagged[static_cast<std::size_t>(p)];
  out.X = out.flagged ? CVec::Zero(right.rows()) : X(p);
  out.e_norm = e_norm(t);
  return out;
}

std::vector<BlochEigenpair> EigenSystem::pairs() const {
  std::vector<BlochEigenpair> out;
  out.reserve(static_cast<std::size_t>(size()));
  for (int p = 0; p < size(); ++p) out.push_back(pair(p));
  return out;
}

EigenSystem solve_eigensystem(const GalerkinMatrix& G, int n, const SolveOptions& opts) {
  const int dim = G.dim();
  // LAPACK zgeev: Hessenberg QR plus back-substitution, right vectors only
  CMat A = G.entries;
  CVec ev(dim);
  CMat vr(dim, dim);
  const lapack_int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', 'V', dim, reinterpret_cast<lapack_complex_double*>(A.data()),
                                        dim, reinterpret_cast<lapack_complex_double*>(ev.data()), nullptr, 1,
                                        reinterpret_cast<lapack_complex_double*>(vr.data()), dim);
  if (info != 0) throw NumericalError("EigensolverFailure", "dense eigensolver did not converge (zgeev info " + std::to_string(info) + ")");

  std::vector<int> order(static_cast<std::size_t>(dim));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ma = std::abs(ev[a]);
    const double mb = std::abs(ev[b]);
    if (ma != mb) return ma < mb;
    return std::arg(ev[a]) < std::arg(ev[b]);
  });

  EigenSystem sys;
  sys.t = G.t;
  sys.K = G.K;
  sys.m = G.m;
  sys.n = n;
  sys.lambda.resize(dim);
  sys.right.resize(dim, dim);
  for (int p = 0; p < dim; ++p) {
    const int src = order[static_cast<std::size_t>(p)];
    sys.lambda[p] = ev[src];
    sys.right.col(p) = vr.col(src).normalized();
  }

  // Left eigenvectors from the same factorisation: rows of V^{-1}.
  const CMat winv = sys.right.partialPivLu().inverse();
  sys.left.resize(dim, dim);
  sys.alpha.resize(dim);
  sys.flagged.assign(static_cast<std::size_t>(dim), false);
  for (int p = 0; p < dim; ++p) {
    CVec w = winv.row(p).adjoint();
    const double nw = w.norm();
    if (!std::isfinite(nw) || nw == 0.0) {
      sys.left.col(p).setZero();
      sys.alpha[p] = 0.0;
      sys.flagged[static_cast<std::size_t>(p)] = true;
      continue;
    }
    w /= nw;
    sys.left.col(p) = w;
    sys.alpha[p] = w.dot(sys.right.col(p));  // (psi, psi*) = psi*^H psi
    sys.flagged[static_cast<std::size_t>(p)] = std::abs(sys.alpha[p]) < opts.alpha_floor;
  }
  return sys;
}

EigenSystem solve_eigensystem(const OperatorSpec& spec, Complex t, int K, const SolveOptions& opts) {
  return solve_eigensystem(assemble_matrix(spec, t, K), spec.n, opts);
}

std::vector<BlochEigenpair> solve_eigen(const OperatorSpec& spec, Complex t, int K, const SolveOptions& opts) {
  return solve_eigensystem(spec, t, K, opts).pairs();
}

std::vector<EigenSystem> solve_many(const OperatorSpec& spec, std::span<const double> ts, int K,
                                    const SolveOptions& opts) {
  std::vector<EigenSystem> out(ts.size());
  parallel_for(ts.size(), [&](std::size_t i) { out[i] = solve_eigensystem(spec, Complex(ts[i], 0.0), K, opts); });
  return out;
}

Complex compute_alpha(const BlochEigenpair& pair) { return pair.psi_star.dot(pair.psi); }

CMat synthesize(const CVec& coeffs, Complex t, int K, int m, std::span<const double> xs) {
  CMat out = CMat::Zero(m, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t ix = 0; ix < xs.size(); ++ix) {
    const double x = xs[ix];
    const double cell = std::floor(x);
    const double x0 = x - cell;
    // exp(i(2 pi k + t) x0) built by recurrence from k = -K.
    const Complex step = std::exp(kI * (kTwoPi * x0));
    Complex phase = std::exp(kI * ((kTwoPi * -K + t) * x0));
    CVec acc = CVec::Zero(m);
    for (int k = -K; k <= K; ++k) {
      acc += coeffs.segment(basis_index(k, 0, K, m), m) * phase;
      phase *= step;
    }
    out.col(static_cast<Eigen::Index>(ix)) = acc * std::exp(kI * t * cell);
  }
  return out;
}

CMat evaluate_eigenfunction(const BlochEigenpair& pair, std::span<const double> xs) {
  return synthesize(pair.psi, pair.t, pair.K, pair.m, xs);
}

BlochEigenpair reference_eigenpair(const OperatorSpec& spec, int k, int j, Complex t, Reference which) {
  const int m = spec.m;
  const int K = std::abs(k);
  const int dim = m * (2 * K + 1);
  BlochEigenpair out;
  out.p = -1;
  out.t = t;
  out.K = K;
  out.m = m;
  out.e_norm = e_norm(t);
  out.psi = CVec::Zero(dim);
  out.psi_star = CVec::Zero(dim);
  const int at = basis_index(k, 0, K, m);
  if (which == Reference::free) {
    out.lambda = leading_term(spec.n, k, t, 0.0);
    out.psi[at + j] = 1.0;
    out.psi_star[at + j] = 1.0;
  } else {
    const MeanMatrixData mean = compute_mean_matrix(spec);
    out.lambda = leading_term(spec.n, k, t, mean.mu[j]);
    out.psi.segment(at, m) = mean.v.col(j);
    const CVec u = mean.u.col(j);
    out.psi_star.segment(at, m) = u.normalized();
  }
  out.alpha = compute_alpha(out);
  out.X = out.psi_star / std::conj(out.alpha);
  return out;
}

}  // namespace blochspec
