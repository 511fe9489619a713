#include "blochspec/floquet.hpp"

#include <algorithm>
#include <functional>
#include <limits>

#include <boost/numeric/odeint.hpp>

#include "blochspec/parallel.hpp"

namespace blochspec {

namespace {

using State = std::vector<Complex>;

// Right-hand side of U' = A(x) U (and V' = A V + A_lambda U when the derivative is requested).
// Only the last block row of the companion matrix is nontrivial.
struct CompanionSystem {
  const OperatorSpec& spec;
  Complex lambda;
  bool derivative;
  int N;

  void operator()(const State& s, State& ds, double x) const {
    const int n = spec.n;
    const int m = spec.m;
    const Complex p1 = spec.p1(x);
    std::vector<CMat> P(static_cast<std::size_t>(n + 1));
    for (int nu = 2; nu <= n; ++nu) P[static_cast<std::size_t>(nu)] = spec.coefficient(nu)(x);

    const int blocks = derivative ? 2 : 1;
    for (int b = 0; b < blocks; ++b) {
      Eigen::Map<const CMat> U(s.data() + static_cast<std::ptrdiff_t>(b) * N * N, N, N);
      Eigen::Map<CMat> dU(ds.data() + static_cast<std::ptrdiff_t>(b) * N * N, N, N);
      dU.topRows(N - m) = U.bottomRows(N - m);
      auto last = dU.bottomRows(m);
      last = lambda * U.topRows(m) - p1 * U.middleRows((n - 1) * m, m);
      for (int nu = 2; nu <= n; ++nu) last.noalias() -= P[static_cast<std::size_t>(nu)] * U.middleRows((n - nu) * m, m);
      if (b == 1) {
        Eigen::Map<const CMat> U0(s.data(), N, N);
        last += U0.topRows(m);
      }
    }
  }
};

Complex poly_eval(const std::vector<Complex>& c, Complex z) {
  Complex acc = 0.0;
  for (std::size_t j = c.size(); j-- > 0;) acc = acc * z + c[j];
  return acc;
}

double wrap_phase(double d) {
  while (d > kPi) d -= kTwoPi;
  while (d <= -kPi) d += kTwoPi;
  return d;
}

}  // namespace

MonodromyResult monodromy(const OperatorSpec& spec, Complex lambda, double tol, bool with_derivative) {
  spec.validate();
  if (!(tol >= 1e-14 && tol <= 1e-5))
    throw ValidationError("ConfigInvalid", "integrator tolerance out of range", "integrator_tol");
  namespace ode = boost::numeric::odeint;
  const int N = spec.n * spec.m;
  const int blocks = with_derivative ? 2 : 1;
  State s(static_cast<std::size_t>(blocks) * N * N, Complex(0.0, 0.0));
  for (int i = 0; i < N; ++i) s[static_cast<std::size_t>(i) * N + i] = 1.0;

  CompanionSystem sys{spec, lambda, with_derivative, N};
  using Stepper = ode::runge_kutta_dopri5<State>;
  auto stepper = ode::make_controlled<Stepper>(tol, tol);
  const double scale = std::pow(1.0 + std::abs(lambda), 1.0 / spec.n);
  const double dt0 = 0.1 / scale;

  std::size_t steps = 0;
  try {
    steps = ode::integrate_adaptive(stepper, sys, s, 0.0, 1.0, dt0);
  } catch (const std::exception& e) {
    throw NumericalError("IntegratorStall", std::string("monodromy integration failed: ") + e.what());
  }
  for (const auto& v : s)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw NumericalError("IntegratorStall", "monodromy integration overflowed");

  MonodromyResult out;
  out.lambda = lambda;
  out.M = Eigen::Map<const CMat>(s.data(), N, N);
  if (with_derivative) out.dM = Eigen::Map<const CMat>(s.data() + static_cast<std::ptrdiff_t>(N) * N, N, N);
  out.integrator_tol = tol;
  out.steps = steps;
  out.est_error = tol * static_cast<double>(std::max<std::size_t>(steps, 1));
  return out;
}

std::vector<Complex> charpoly_of(const CMat& M) {
  const int N = static_cast<int>(M.rows());
  Eigen::ComplexEigenSolver<CMat> es(M, false);
  if (es.info() != Eigen::Success) throw NumericalError("EigensolverFailure", "monodromy eigensolve failed");
  std::vector<Complex> c(static_cast<std::size_t>(N + 1), Complex(0.0, 0.0));
  c[0] = 1.0;
  // multiply by (z - z_i), coefficients stored by ascending power
  for (int i = 0; i < N; ++i) {
    const Complex zi = es.eigenvalues()[i];
    for (int j = i + 1; j >= 1; --j) c[static_cast<std::size_t>(j)] = c[static_cast<std::size_t>(j - 1)] - zi * c[static_cast<std::size_t>(j)];
    c[0] = -zi * c[0];
  }
  return c;
}

Complex CharPoly::operator()(Complex z) const { return poly_eval(coeffs, z); }
Complex CharPoly::derivative_lambda(Complex z) const { return poly_eval(dcoeffs, z); }

CharPoly char_poly_coeffs(const MonodromyResult& mono) {
  CharPoly out;
  out.lambda = mono.lambda;
  out.coeffs = charpoly_of(mono.M);
  if (mono.dM.size() == 0) return out;

  // Each coefficient of charpoly(M + e dM) is a polynomial of degree <= N in e,
  // so N + 1 samples on a circle give the derivative at e = 0 exactly.
  const int N = static_cast<int>(mono.M.rows());
  const double nd = mono.dM.norm();
  const double h = nd > 0.0 ? 0.5 * mono.M.norm() / nd : 1.0;
  out.dcoeffs.assign(static_cast<std::size_t>(N + 1), Complex(0.0, 0.0));
  for (int l = 0; l <= N; ++l) {
    const Complex w = std::exp(kI * (kTwoPi * l / (N + 1)));
    const auto c = charpoly_of(mono.M + (h * w) * mono.dM);
    for (int j = 0; j <= N; ++j) out.dcoeffs[static_cast<std::size_t>(j)] += c[static_cast<std::size_t>(j)] * std::conj(w);
  }
  for (auto& d : out.dcoeffs) d /= (N + 1) * h;
  out.dcoeffs[static_cast<std::size_t>(N)] = 0.0;  // monic
  return out;
}

CharPoly char_poly_coeffs(const OperatorSpec& spec, Complex lambda, double tol, bool with_derivative) {
  return char_poly_coeffs(monodromy(spec, lambda, tol, with_derivative));
}

Complex char_det(const MonodromyResult& mono, double t) {
  const int N = static_cast<int>(mono.M.rows());
  const CMat A = std::exp(kI * t) * CMat::Identity(N, N) - mono.M;
  return A.partialPivLu().determinant();
}

Complex char_det(const OperatorSpec& spec, Complex lambda, double t, double tol) {
  return char_det(monodromy(spec, lambda, tol), t);
}

double multiplier_gap(const MonodromyResult& mono, double t) {
  const int N = static_cast<int>(mono.M.rows());
  const CMat A = mono.M - std::exp(kI * t) * CMat::Identity(N, N);
  Eigen::JacobiSVD<CMat> svd(A);
  const double big = Eigen::JacobiSVD<CMat>(mono.M).singularValues()[0];
  return svd.singularValues()[N - 1] / big;
}

std::vector<Complex> char_roots(const OperatorSpec& spec, double t, const std::vector<Complex>& seeds, double tol,
                                int max_iter) {
  std::vector<std::optional<Complex>> found(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    Complex lam = seeds[i];
    const Complex z = std::exp(kI * t);
    for (int it = 0; it < max_iter; ++it) {
      const auto mono = monodromy(spec, lam, tol, true);
      const int N = static_cast<int>(mono.M.rows());
      const CMat A = z * CMat::Identity(N, N) - mono.M;
      // d log det(zI - M) / d lambda = -tr((zI - M)^{-1} dM)
      const Complex dlog = -A.partialPivLu().solve(mono.dM).trace();
      if (!std::isfinite(std::abs(dlog)) || std::abs(dlog) == 0.0) return;
      const Complex step = 1.0 / dlog;
      lam -= step;
      if (std::abs(step) < 1e-12 * (1.0 + std::abs(lam))) {
        found[i] = lam;
        return;
      }
    }
  });
  std::vector<Complex> roots;
  for (const auto& f : found) {
    if (!f) continue;
    bool dup = false;
    for (const auto& r : roots) dup = dup || std::abs(r - *f) < 1e-7 * (1.0 + std::abs(*f));
    if (!dup) roots.push_back(*f);
  }
  std::sort(roots.begin(), roots.end(), [](Complex a, Complex b) {
    if (std::abs(a) != std::abs(b)) return std::abs(a) < std::abs(b);
    return std::arg(a) < std::arg(b);
  });
  return roots;
}

namespace {

// Sylvester matrix of p (degree N, monic) and q/s (formal degree N - 1), rows hold
// coefficients from the highest power down. s is the largest |coefficient| of q.
CMat sylvester(const CharPoly& poly, double s) {
  const int N = poly.degree();
  const int dq = N - 1;
  const int S = N + dq;
  CMat syl = CMat::Zero(S, S);
  for (int r = 0; r < dq; ++r)
    for (int j = 0; j <= N; ++j) syl(r, r + j) = poly.coeffs[static_cast<std::size_t>(N - j)];
  for (int r = 0; r < N; ++r)
    for (int j = 0; j <= dq; ++j) syl(dq + r, r + j) = poly.dcoeffs[static_cast<std::size_t>(dq - j)] / s;
  return syl;
}

double dcoeff_scale(const CharPoly& poly) {
  double s = 0.0;
  for (int j = 0; j < poly.degree(); ++j) s = std::max(s, std::abs(poly.dcoeffs[static_cast<std::size_t>(j)]));
  return s;
}

}  // namespace

Complex log_resultant(const CharPoly& poly) {
  const int N = poly.degree();
  const double s = dcoeff_scale(poly);
  if (s == 0.0) return Complex(-std::numeric_limits<double>::infinity(), 0.0);
  const int S = 2 * N - 1;
  const CMat syl = sylvester(poly, s);

  Eigen::PartialPivLU<CMat> lu(syl);
  const CMat& LU = lu.matrixLU();
  double logabs = N * std::log(s);
  double phase = 0.0;
  for (int i = 0; i < S; ++i) {
    const Complex d = LU(i, i);
    if (d == Complex(0.0, 0.0)) return Complex(-std::numeric_limits<double>::infinity(), 0.0);
    logabs += std::log(std::abs(d));
    phase += std::arg(d);
  }
  if (lu.permutationP().determinant() < 0) phase += kPi;
  return Complex(logabs, wrap_phase(phase));
}

Complex log_resultant(const OperatorSpec& spec, Complex lambda, double tol) {
  return log_resultant(char_poly_coeffs(spec, lambda, tol, true));
}

std::vector<double> quasimomenta_of(const CharPoly& poly, double unit_circle_tol) {
  const int N = poly.degree();
  CMat comp = CMat::Zero(N, N);
  for (int i = 1; i < N; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < N; ++i) comp(i, N - 1) = -poly.coeffs[static_cast<std::size_t>(i)];
  Eigen::ComplexEigenSolver<CMat> es(comp, false);
  std::vector<Complex> z(es.eigenvalues().data(), es.eigenvalues().data() + N);

  // A multiple root splits under rounding by about sqrt(eps); group such roots.
  const double cluster = 1e-4;
  std::vector<bool> used(z.size(), false);
  std::vector<double> ts;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (used[i]) continue;
    Complex sum = z[i];
    int count = 1;
    used[i] = true;
    for (std::size_t j = i + 1; j < z.size(); ++j) {
      if (!used[j] && std::abs(z[j] - z[i]) < cluster * (1.0 + std::abs(z[i]))) {
        used[j] = true;
        sum += z[j];
        ++count;
      }
    }
    const Complex c = sum / static_cast<double>(count);
    if (std::abs(std::abs(c) - 1.0) < unit_circle_tol) ts.push_back(wrap_quasimomentum(std::arg(c)));
  }
  std::sort(ts.begin(), ts.end());
  return ts;
}

DegeneracyCatalog resultant_scan(const OperatorSpec& spec, const Region& region, const ScanOptions& opts) {
  // When chi and its derivative share a factor for every lambda (e.g. C = 0 with m > 1,
  // where every multiplier is double) R vanishes identically and has no isolated zeros.
  {
    // a property of the polynomial in lambda, so unit-scale probes suffice; far out
    // the Sylvester matrix is too badly scaled to tell rank from rounding
    bool identically = true;
    for (const Complex probe : {Complex(0.7, 0.4), Complex(-1.3, 0.9), Complex(0.35, -1.7)}) {
      const CharPoly poly = char_poly_coeffs(spec, probe, opts.integrator_tol, true);
      const double s = dcoeff_scale(poly);
      if (s == 0.0) continue;
      Eigen::JacobiSVD<CMat> svd(sylvester(poly, s));
      const auto& sv = svd.singularValues();
      if (sv(sv.size() - 1) > 1e-9 * sv(0)) {
        identically = false;
        break;
      }
    }
    if (identically)
      throw NumericalError("ResultantVanishes",
                           "the discriminant of the characteristic polynomial vanishes for every lambda; "
                           "all multipliers are multiple and there are no isolated degenerate points");
  }
  DegeneracyCatalog cat;
  cat.region = region;
  const int nx = opts.nx;
  const int ny = opts.ny;
  // The grid is padded unevenly by odd fractions of a cell so that zeros on
  // symmetry axes (e.g. the real line) do not sit on a cell boundary.
  const double cx = (region.re_hi - region.re_lo) / nx;
  const double cy = (region.im_hi - region.im_lo) / ny;
  const double x0 = region.re_lo - 0.1237 * cx;
  const double y0 = region.im_lo - 0.1713 * cy;
  const double wx = (region.re_hi + 0.3119 * cx - x0) / nx;
  const double wy = (region.im_hi + 0.2671 * cy - y0) / ny;
  auto node = [&](int i, int j) { return Complex(x0 + i * wx, y0 + j * wy); };
  auto logR = [&](Complex lam) { return log_resultant(spec, lam, opts.integrator_tol); };

  std::vector<Complex> L(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  parallel_for(L.size(), [&](std::size_t idx) {
    const int i = static_cast<int>(idx) % (nx + 1);
    const int j = static_cast<int>(idx) / (nx + 1);
    L[idx] = logR(node(i, j));
  });
  auto Lat = [&](int i, int j) { return L[static_cast<std::size_t>(j * (nx + 1) + i)]; };

  // Phase increment of R along a straight edge, subdivided until each piece turns by < pi/4.
  std::function<double(Complex, Complex, Complex, Complex, int)> edge =
      [&](Complex a, Complex La, Complex b, Complex Lb, int depth) -> double {
    const double d = wrap_phase(Lb.imag() - La.imag());
    if (std::abs(d) < kPi / 4 || depth >= 10) return d;
    const Complex mid = 0.5 * (a + b);
    const Complex Lm = logR(mid);
    return edge(a, La, mid, Lm, depth + 1) + edge(mid, Lm, b, Lb, depth + 1);
  };

  std::vector<double> H(static_cast<std::size_t>(nx * (ny + 1)));
  std::vector<double> V(static_cast<std::size_t>((nx + 1) * ny));
  parallel_for(H.size(), [&](std::size_t idx) {
    const int i = static_cast<int>(idx) % nx;
    const int j = static_cast<int>(idx) / nx;
    H[idx] = edge(node(i, j), Lat(i, j), node(i + 1, j), Lat(i + 1, j), 0);
  });
  parallel_for(V.size(), [&](std::size_t idx) {
    const int i = static_cast<int>(idx) % (nx + 1);
    const int j = static_cast<int>(idx) / (nx + 1);
    V[idx] = edge(node(i, j), Lat(i, j), node(i, j + 1), Lat(i, j + 1), 0);
  });

  struct Candidate {
    Complex start;
    int wind;
  };
  std::vector<Candidate> cands;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double w = H[static_cast<std::size_t>(j * nx + i)] + V[static_cast<std::size_t>(j * (nx + 1) + i + 1)] -
                       H[static_cast<std::size_t>((j + 1) * nx + i)] - V[static_cast<std::size_t>(j * (nx + 1) + i)];
      const int wind = static_cast<int>(std::lround(w / kTwoPi));
      if (wind > 0) cands.push_back({node(i, j) + Complex(0.5 * wx, 0.5 * wy), wind});
    }

  // Newton with multiplicity on log R; derivative by central differences with a step
  // that shrinks with the iterate's movement. Once steps are small the iteration is
  // limited by noise in R, so the point of smallest |R| seen so far is kept.
  std::vector<std::optional<Complex>> polished(cands.size());
  parallel_for(cands.size(), [&](std::size_t c) {
    Complex lam = cands[c].start;
    const double cell = std::hypot(wx, wy);
    double h = 1e-4 * cell;
    Complex best = lam;
    double best_val = std::numeric_limits<double>::infinity();
    int settled = -1;
    for (int it = 0; it < opts.max_newton; ++it) {
      const double scale = 1.0 + std::abs(lam);
      const Complex L0 = logR(lam);
      if (L0.real() < best_val) {
        best_val = L0.real();
        best = lam;
      }
      const Complex dl = logR(lam + h) - logR(lam - h);
      Complex dlog(dl.real(), wrap_phase(dl.imag()));
      dlog /= 2.0 * h;
      if (!std::isfinite(std::abs(dlog)) || std::abs(dlog) == 0.0) break;
      const Complex step = static_cast<double>(cands[c].wind) / dlog;
      lam -= step;
      if (std::abs(lam - cands[c].start) > 2.0 * cell) break;
      if (std::abs(step) < opts.refine_tol * scale) {
        polished[c] = lam;
        return;
      }
      h = std::max(1e-3 * std::abs(step), 1e-12 * scale);
      if (settled < 0 && std::abs(step) < 1e-6 * scale) settled = it;
      if (settled >= 0 && it - settled >= 6) {
        polished[c] = best;
        return;
      }
    }
  });

  std::vector<std::pair<Complex, int>> zeros;
  for (std::size_t c = 0; c < cands.size(); ++c) {
    if (!polished[c]) {
      cat.diverged.push_back(cands[c].start);
      continue;
    }
    // a multiple zero split by rounding lands in neighbouring cells; merge and add up
    bool dup = false;
    for (auto& z : zeros) {
      if (std::abs(z.first - *polished[c]) < 1e-5 * (1.0 + std::abs(z.first))) {
        z.first = (z.first * static_cast<double>(z.second) + *polished[c] * static_cast<double>(cands[c].wind)) /
                  static_cast<double>(z.second + cands[c].wind);
        z.second += cands[c].wind;
        dup = true;
        break;
      }
    }
    if (!dup) zeros.emplace_back(*polished[c], cands[c].wind);
  }

  for (const auto& [a, wind] : zeros) {
    const auto mono = monodromy(spec, a, opts.integrator_tol, false);
    const auto poly = char_poly_coeffs(mono);
    DegeneracyEntry e;
    e.a = a;
    e.multiplicity = wind;
    e.A = quasimomenta_of(poly, opts.unit_circle_tol);
    if (e.A.empty()) {
      cat.dropped.push_back(a);
      continue;
    }
    for (double t : e.A) e.residual = std::max(e.residual, std::abs(char_det(mono, t)));
    cat.entries.push_back(e);
  }
  std::sort(cat.entries.begin(), cat.entries.end(), [](const DegeneracyEntry& x, const DegeneracyEntry& y) {
    if (x.a.real() != y.a.real()) return x.a.real() < y.a.real();
    return x.a.imag() < y.a.imag();
  });
  for (const auto& e : cat.entries) cat.A.insert(cat.A.end(), e.A.begin(), e.A.end());
  std::sort(cat.A.begin(), cat.A.end());
  cat.A.erase(std::unique(cat.A.begin(), cat.A.end(), [](double x, double y) { return std::abs(x - y) < 1e-9; }),
              cat.A.end());
  return cat;
}

}  // namespace blochspec
