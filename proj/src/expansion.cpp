#include "blochspec/expansion.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "blochspec/parallel.hpp"

namespace blochspec {

namespace {

double max_abs(const CMat& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

// Wynn's epsilon table; returns the deepest even-column entry built before a
// difference drops to rounding level. Exact for sums of geometric terms, which is
// what power-law remainders in delta = delta0 2^-l look like.
Complex wynn_limit(const std::vector<Complex>& s) {
  double scale = 0.0;
  for (const Complex& v : s) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0.0;
  std::vector<Complex> prev(s.size() + 1, 0.0);
  std::vector<Complex> cur = s;
  Complex best = s.back();
  for (std::size_t k = 0; cur.size() >= 2; ++k) {
    std::vector<Complex> next(cur.size() - 1);
    for (std::size_t i = 0; i + 1 < cur.size(); ++i) {
      const Complex d = cur[i + 1] - cur[i];
      if (std::abs(d) <= 1e-14 * scale) return best;
      next[i] = prev[i + 1] + 1.0 / d;
    }
    prev = std::move(cur);
    cur = std::move(next);
    if (k % 2 == 1) best = cur.back();
  }
  return best;
}

// Gauss-Legendre nodes over [0, 1], cut where the support of f starts or ends.
std::vector<QuadNode> cell_nodes(const TestFunction& f) {
  const double a = f.lo() - std::floor(f.lo());
  const double b = f.hi() - std::floor(f.hi());
  return composite_nodes(panel_breaks(0.0, 1.0, {a, b}, 1.0 / 64.0), gauss_legendre16());
}

std::vector<double> xs_of(const std::vector<QuadNode>& nodes) {
  std::vector<double> xs;
  xs.reserve(nodes.size());
  for (const auto& q : nodes) xs.push_back(q.x);
  return xs;
}

bool inside_odd_pi(double a, double b, double& cut) {
  // odd multiple of pi strictly inside (a, b)
  const double k = std::ceil((a / kPi - 1.0) / 2.0);
  cut = (2.0 * k + 1.0) * kPi;
  if (cut <= a) cut += kTwoPi;
  return cut < b && cut - a > 1e-14 && b - cut > 1e-14;
}

using PanelKey = std::pair<double, double>;

struct PanelValue {
  CMat kronrod;
  CMat gauss;
};

class PanelCache {
 public:
  PanelCache(const Integrand& g, Eigen::Index rows, Eigen::Index cols) : g_(g), rows_(rows), cols_(cols) {}

  const PanelValue& get(double a, double b) {
    auto it = cache_.find({a, b});
    if (it != cache_.end()) return it->second;
    const auto& rule = gauss_kronrod15();
    PanelValue v{CMat::Zero(rows_, cols_), CMat::Zero(rows_, cols_)};
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    for (std::size_t i = 0; i < rule.x.size(); ++i) {
      const CMat y = g_(wrap_quasimomentum(mid + half * rule.x[i]));
      v.kronrod += (half * rule.w[i]) * y;
      if (rule.gauss_w[i] != 0.0) v.gauss += (half * rule.gauss_w[i]) * y;
    }
    return cache_.emplace(PanelKey{a, b}, std::move(v)).first->second;
  }

 private:
  const Integrand& g_;
  Eigen::Index rows_;
  Eigen::Index cols_;
  std::map<PanelKey, PanelValue> cache_;
};

// Splits every panel at odd multiples of pi so wrapped evaluation stays continuous.
std::vector<PanelKey> split_at_wrap(const std::vector<PanelKey>& panels) {
  std::vector<PanelKey> out;
  for (auto [a, b] : panels) {
    double cut = 0.0;
    while (inside_odd_pi(a, b, cut)) {
      out.emplace_back(a, cut);
      a = cut;
    }
    out.emplace_back(a, b);
  }
  return out;
}

}  // namespace

CMat gelfand_transform(const TestFunction& f, double t, std::span<const double> xs) { return f.gelfand(t, xs); }

double gelfand_inversion_error(const TestFunction& f, std::span<const double> xs, int n_t) {
  CMat acc = CMat::Zero(f.m(), static_cast<Eigen::Index>(xs.size()));
  for (int q = 0; q < n_t; ++q) {
    const double t = -kPi + kTwoPi * (q + 0.5) / n_t;
    acc += f.gelfand(t, xs) / static_cast<double>(n_t);
  }
  double err = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    err = std::max(err, (acc.col(static_cast<Eigen::Index>(i)) - f(xs[i])).cwiseAbs().maxCoeff());
  return err;
}

std::pair<double, double> gelfand_parseval(const TestFunction& f, int n_t) {
  const auto nodes = cell_nodes(f);
  const auto xs = xs_of(nodes);
  double lhs = 0.0;
  for (int q = 0; q < n_t; ++q) {
    const double t = -kPi + kTwoPi * (q + 0.5) / n_t;
    const CMat ft = f.gelfand(t, xs);
    double e = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) e += nodes[i].w * ft.col(static_cast<Eigen::Index>(i)).squaredNorm();
    lhs += e / n_t;
  }
  const double nf = f.norm();
  return {lhs, nf * nf};
}

Complex coefficient_a(const TestFunction& f, const BlochEigenpair& pair, CoefficientMode mode) {
  if (pair.flagged)
    throw NumericalError("FlaggedPair", "coefficient requested for a pair with |alpha| below the floor");
  if (pair.t.imag() != 0.0)
    throw ValidationError("ConfigInvalid", "expansion coefficients need a real quasimomentum", "t");
  if (f.m() != pair.m) throw ValidationError("ConfigInvalid", "test function has the wrong number of components", "m");
  const double t = pair.t.real();
  switch (mode) {
    case CoefficientMode::spectral: return pair.X.dot(f.bloch_coefficients(t, pair.K));
    case CoefficientMode::cell: {
      const auto nodes = cell_nodes(f);
      const auto xs = xs_of(nodes);
      const CMat ft = f.gelfand(t, xs);
      const CMat X = synthesize(pair.X, pair.t, pair.K, pair.m, xs);
      Complex s = 0.0;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        s += nodes[i].w * X.col(c).dot(ft.col(c));
      }
      return s;
    }
    case CoefficientMode::line: {
      const auto xs = xs_of(f.nodes());
      const CMat X = synthesize(pair.X, pair.t, pair.K, pair.m, xs);
      Complex s = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        s += f.nodes()[i].w * X.col(c).dot(f.node_values().col(c));
      }
      return s;
    }
  }
  return 0.0;
}

BranchIntegral integrate_branch(const Integrand& g, Eigen::Index rows, Eigen::Index cols,
                                const std::vector<double>& singular, const BranchQuadOptions& opts) {
  std::vector<double> sing;
  for (double s : singular) sing.push_back(wrap_quasimomentum(s));
  auto is_singular = [&](double b) {
    for (double s : sing) {
      if (std::abs(s - b) < 1e-12) return true;
      if (std::abs(s - kPi) < 1e-12 && std::abs(b + kPi) < 1e-12) return true;  // -pi and pi coincide
    }
    return false;
  };
  auto breaks = panel_breaks(-kPi, kPi, sing, opts.max_width);
  // a panel with two singular ends is split so each half is graded one way
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    if (is_singular(breaks[i]) && is_singular(breaks[i + 1])) {
      breaks.insert(breaks.begin() + static_cast<std::ptrdiff_t>(i) + 1, 0.5 * (breaks[i] + breaks[i + 1]));
      ++i;
    }
  }

  PanelCache cache(g, rows, cols);
  auto level_value = [&](int L, CMat* gauss) {
    CMat I = CMat::Zero(rows, cols);
    if (gauss) *gauss = CMat::Zero(rows, cols);
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
      const double a = breaks[i];
      const double b = breaks[i + 1];
      std::vector<PanelKey> panels;
      const double h = b - a;
      if (L > 0 && is_singular(a)) {
        for (int l = L; l >= 1; --l) panels.emplace_back(a + h * std::ldexp(1.0, -l), a + h * std::ldexp(1.0, -l + 1));
        panels.insert(panels.begin(), PanelKey{a, a + h * std::ldexp(1.0, -L)});
      } else if (L > 0 && is_singular(b)) {
        panels.emplace_back(b - h * std::ldexp(1.0, -L), b);
        for (int l = L; l >= 1; --l) panels.emplace_back(b - h * std::ldexp(1.0, -l + 1), b - h * std::ldexp(1.0, -l));
      } else {
        panels.emplace_back(a, b);
      }
      for (const auto& [pa, pb] : panels) {
        const auto& v = cache.get(pa, pb);
        I += v.kronrod;
        if (gauss) *gauss += v.gauss;
      }
    }
    return I;
  };

  BranchIntegral out;
  CMat gauss;
  CMat prev = level_value(0, &gauss);
  if (sing.empty()) {
    out.value = prev;
    out.error = max_abs(prev - gauss);
    out.converged = true;
    return out;
  }
  double d_prev = -1.0;
  int growing = 0;
  std::optional<CMat> R_prev;
  for (int L = 1; L <= opts.max_levels; ++L) {
    const CMat cur = level_value(L, nullptr);
    const double d = max_abs(cur - prev);
    const double scale = std::max(1.0, max_abs(cur));
    out.levels = L;
    out.value = cur;
    out.error = d;
    if (d <= opts.tol * scale) {
      out.converged = true;
      return out;
    }
    if (d_prev > 0.0) {
      const double r = d / d_prev;
      growing = r >= 1.0 - 1e-3 ? growing + 1 : 0;
      if (growing >= 3)
        throw NumericalError("NonIntegrableBranch",
                             "panel refinement towards a singular quasimomentum does not converge "
                             "(successive changes stopped shrinking)");
      if (r < 0.95) {
        const CMat R = cur + (cur - prev) * (r / (1.0 - r));
        if (R_prev) {
          const double e = max_abs(R - *R_prev);
          if (e <= opts.tol * scale) {
            out.value = R;
            out.error = e;
            out.converged = true;
            return out;
          }
        }
        R_prev = R;
      } else {
        R_prev.reset();
      }
    }
    d_prev = d;
    prev = cur;
  }
  if (R_prev) out.value = *R_prev;
  return out;
}

HuddleResult huddled_integral(const Integrand& g, Eigen::Index rows, Eigen::Index cols,
                              const std::vector<double>& E_in, const HuddleOptions& opts) {
  if (opts.levels < 3) throw ValidationError("ConfigInvalid", "huddled integration needs at least 3 levels", "levels");
  if (!(opts.delta0 > 0.0)) throw ValidationError("ConfigInvalid", "delta0 must be positive", "delta0");
  std::vector<double> E;
  for (double e : E_in) E.push_back(wrap_quasimomentum(e));
  std::sort(E.begin(), E.end());
  double gap = kTwoPi;
  for (std::size_t i = 0; i < E.size(); ++i) {
    const double next = i + 1 < E.size() ? E[i + 1] : E[0] + kTwoPi;
    gap = std::min(gap, next - E[i]);
  }
  if (!E.empty() && !(opts.delta0 < 0.5 * gap))
    throw ValidationError("ConfigInvalid",
                          "delta0 must be below half the smallest gap between singular quasimomenta", "delta0");

  HuddleResult out;
  for (int l = 0; l < opts.levels; ++l) out.deltas.push_back(opts.delta0 * std::ldexp(1.0, -l));
  if (!g) {
    out.sequence.assign(out.deltas.size(), CMat::Zero(rows, cols));
    out.extrapolated = out.sequence;
    out.limit = CMat::Zero(rows, cols);
    return out;
  }

  PanelCache cache(g, rows, cols);
  auto level_value = [&](int l) {
    std::vector<PanelKey> panels;
    if (E.empty()) {
      const auto b = panel_breaks(-kPi, kPi, {}, 1.0);
      for (std::size_t i = 0; i + 1 < b.size(); ++i) panels.emplace_back(b[i], b[i + 1]);
    }
    for (std::size_t i = 0; i < E.size(); ++i) {
      const double lo = E[i];
      const double hi = i + 1 < E.size() ? E[i + 1] : E[0] + kTwoPi;
      for (int j = l; j >= 1; --j) panels.emplace_back(lo + out.deltas[static_cast<std::size_t>(j)],
                                                       lo + out.deltas[static_cast<std::size_t>(j - 1)]);
      const auto mid = panel_breaks(lo + opts.delta0, hi - opts.delta0, {}, 1.0);
      for (std::size_t q = 0; q + 1 < mid.size(); ++q) panels.emplace_back(mid[q], mid[q + 1]);
      for (int j = 1; j <= l; ++j) panels.emplace_back(hi - out.deltas[static_cast<std::size_t>(j - 1)],
                                                       hi - out.deltas[static_cast<std::size_t>(j)]);
    }
    CMat I = CMat::Zero(rows, cols);
    for (const auto& [a, b] : split_at_wrap(panels)) I += cache.get(a, b).kronrod;
    return I;
  };

  for (int l = 0; l < opts.levels; ++l) out.sequence.push_back(level_value(l));

  // epsilon extrapolation entrywise on each prefix; the observed order is a diagnostic
  const std::size_t L = out.sequence.size();
  out.extrapolated.assign(L, CMat(rows, cols));
  std::vector<Complex> seq;
  for (std::size_t l = 0; l < L; ++l)
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) {
        seq.clear();
        for (std::size_t q = 0; q <= l; ++q) seq.push_back(out.sequence[q](r, c));
        out.extrapolated[l](r, c) = wynn_limit(seq);
      }
  const double d1 = max_abs(out.sequence[L - 2] - out.sequence[L - 3]);
  const double d2 = max_abs(out.sequence[L - 1] - out.sequence[L - 2]);
  if (d1 > 0.0 && d2 > 0.0) out.order = std::log2(d1 / d2);
  out.limit = out.extrapolated[L - 1];
  out.tail = max_abs(out.extrapolated[L - 1] - out.extrapolated[L - 2]);
  out.converged = std::isfinite(out.tail) && out.tail < opts.tail_tol;
  return out;
}

CMat bandlimited_fourier(const TestFunction& f, double Omega, std::span<const double> xs) {
  const auto nodes = composite_nodes(panel_breaks(-Omega, Omega, {}, 0.5), gauss_legendre16());
  CMat out = CMat::Zero(f.m(), static_cast<Eigen::Index>(xs.size()));
  CMat F(f.m(), static_cast<Eigen::Index>(nodes.size()));
  for (std::size_t q = 0; q < nodes.size(); ++q) F.col(static_cast<Eigen::Index>(q)) = f.fourier(nodes[q].x) * nodes[q].w;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CVec acc = CVec::Zero(f.m());
    for (std::size_t q = 0; q < nodes.size(); ++q)
      acc += F.col(static_cast<Eigen::Index>(q)) * std::exp(kI * (nodes[q].x * xs[i]));
    out.col(static_cast<Eigen::Index>(i)) = acc / kTwoPi;
  }
  return out;
}

double l2_distance(const CMat& a, const CMat& b, std::span<const double> w) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    s += w[i] * (a.col(c) - b.col(c)).squaredNorm();
  }
  return std::sqrt(s);
}

ExpansionResult reconstruct(const OperatorSpec& spec, const TestFunction& f, const ExpansionParams& params,
                            const std::vector<double>& A, const SingularityReport* report) {
  if (params.K_branch < 1) throw ValidationError("ConfigInvalid", "K_branch must be at least 1", "K_branch");
  if (2 * params.K_branch > params.K)
    throw ValidationError("ConfigInvalid",
                          "K_branch = " + std::to_string(params.K_branch) + " exceeds K/2 = " + std::to_string(params.K / 2),
                          "K_branch");
  for (int c : params.extra_cuts)
    if (c < 1 || c > params.K_branch)
      throw ValidationError("ConfigInvalid", "extra K_branch cuts must lie in [1, K_branch]", "extra_cuts");
  if (f.m() != spec.m)
    throw ValidationError("ConfigInvalid", "test function has " + std::to_string(f.m()) + " components, operator has " +
                                               std::to_string(spec.m), "test_function");
  if (params.windows.empty()) throw ValidationError("ConfigInvalid", "at least one window is needed", "windows");
  for (const auto& [a, b] : params.windows)
    if (!(b > a)) throw ValidationError("ConfigInvalid", "windows must satisfy a < b", "windows");

  const int m = spec.m;
  const int K = params.K;
  ExpansionResult res;
  res.K = K;
  res.K_branch = params.K_branch;

  // output points: Gauss-Legendre over the windows
  std::vector<int> window_of;
  for (std::size_t w = 0; w < params.windows.size(); ++w) {
    const auto [a, b] = params.windows[w];
    for (const auto& q : composite_nodes(panel_breaks(a, b, {}, params.x_panel), gauss_legendre16())) {
      res.x.push_back(q.x);
      res.xw.push_back(q.w);
      window_of.push_back(static_cast<int>(w));
    }
  }
  const auto nx = static_cast<Eigen::Index>(res.x.size());
  res.f_samples.resize(m, nx);
  for (Eigen::Index i = 0; i < nx; ++i) res.f_samples.col(i) = f(res.x[static_cast<std::size_t>(i)]);

  // t nodes, cut at A and E
  std::vector<double> splits;
  for (double a : A) splits.push_back(wrap_quasimomentum(a));
  std::vector<double> E;
  std::set<int> S;
  if (report) {
    E = report->E;
    S.insert(report->S.begin(), report->S.end());
  }
  for (double e : E) splits.push_back(wrap_quasimomentum(e));
  const auto tnodes = composite_nodes(panel_breaks(-kPi, kPi, splits, params.t_panel), gauss_kronrod15());
  std::vector<double> ts = xs_of(tnodes);
  res.t_nodes = ts.size();

  auto systems = solve_many(spec, ts, K);
  const BandSet bs = track_bands(spec, systems, ts, {}, params.force);
  res.N0 = bs.N0;
  res.N1 = bs.N1;

  std::vector<CVec> coeffs(ts.size());
  parallel_for(ts.size(), [&](std::size_t i) { coeffs[i] = f.bloch_coefficients(ts[i], K); });

  // x-synthesis of a t-integral: sum_i W(:, i) exp(i(2 pi k + t_i)x)
  const auto nt = static_cast<Eigen::Index>(ts.size());
  CMat Et(nt, nx);
  for (Eigen::Index i = 0; i < nt; ++i)
    for (Eigen::Index q = 0; q < nx; ++q) Et(i, q) = std::exp(kI * (ts[static_cast<std::size_t>(i)] * res.x[static_cast<std::size_t>(q)]));
  CMat Ek(2 * K + 1, nx);
  for (int k = -K; k <= K; ++k)
    for (Eigen::Index q = 0; q < nx; ++q) Ek(k + K, q) = std::exp(kI * (kTwoPi * k * res.x[static_cast<std::size_t>(q)]));
  auto to_x = [&](const CMat& W) {
    const CMat Y = W * Et;
    CMat out = CMat::Zero(m, nx);
    for (int k = -K; k <= K; ++k) out += Y.middleRows((k + K) * m, m) * Ek.row(k + K).asDiagonal();
    return out;
  };

  const int P_max = (2 * params.K_branch + 1) * m;
  const Eigen::Index D = systems[0].right.rows();
  std::vector<const BandFunction*> included;
  for (const auto& b : bs.bands)
    if (!b.tail && b.p <= P_max) included.push_back(&b);

  std::vector<CMat> branch_x(included.size());
  CMat W_low = CMat::Zero(D, nt);
  CMat W_all = CMat::Zero(D, nt);
  CMat W_gauss = CMat::Zero(D, nt);
  for (std::size_t bi = 0; bi < included.size(); ++bi) {
    const auto& b = *included[bi];
    CMat W(D, nt);
    for (Eigen::Index i = 0; i < nt; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const int col = b.raw_index[ii];
      const auto& sys = systems[ii];
      if (sys.flagged[static_cast<std::size_t>(col)])
        throw NumericalError("FlaggedPair", "branch " + std::to_string(b.p) + " is near-defective at t = " +
                                                std::to_string(ts[ii]) + "; route it through the huddled integral");
      const Complex a = sys.X(col).dot(coeffs[ii]);
      W.col(i) = (tnodes[ii].w * a) * sys.right.col(col);
      if (!S.count(b.p)) W_gauss.col(i) += (tnodes[ii].gauss_w * a) * sys.right.col(col);
    }
    branch_x[bi] = to_x(W) / kTwoPi;
    if (S.count(b.p)) continue;
    W_all += W;
    if (b.p <= bs.N1) W_low += W;
  }

  CMat termwise = CMat::Zero(m, nx);
  CMat termwise_low = CMat::Zero(m, nx);
  CMat all_branches = CMat::Zero(m, nx);
  for (std::size_t bi = 0; bi < included.size(); ++bi) {
    const auto& b = *included[bi];
    all_branches += branch_x[bi];
    if (S.count(b.p)) continue;
    termwise += branch_x[bi];
    if (b.p <= bs.N1) termwise_low += branch_x[bi];
  }
  res.termwise_vs_summed = max_abs(to_x(W_low) / kTwoPi - termwise_low);
  res.quad_error = max_abs(to_x(W_all - W_gauss)) / kTwoPi;

  // huddled part over S
  CMat huddle_part = CMat::Zero(m, nx);
  std::vector<int> S_included;
  for (const auto* b : included)
    if (S.count(b->p)) S_included.push_back(b->p);
  Integrand sum_over_S;
  if (!S_included.empty()) {
    sum_over_S = [&, S_included](double t) -> CMat {
      const auto sys = solve_eigensystem(spec, Complex(t, 0.0), K);
      const CVec c = f.bloch_coefficients(t, K);
      // match each S branch to the column nearest its interpolated value
      std::vector<bool> used(static_cast<std::size_t>(sys.size()), false);
      CVec acc = CVec::Zero(sys.right.rows());
      for (int p : S_included) {
        const auto* b = bs.find_p(p);
        std::size_t i1 = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
        i1 = std::clamp<std::size_t>(i1, 1, ts.size() - 1);
        const double s = (t - ts[i1 - 1]) / (ts[i1] - ts[i1 - 1]);
        const Complex pred = b->lambda[i1 - 1] + s * (b->lambda[i1] - b->lambda[i1 - 1]);
        int best = -1;
        for (int q = 0; q < sys.size(); ++q)
          if (!used[static_cast<std::size_t>(q)] &&
              (best < 0 || std::abs(sys.lambda[q] - pred) < std::abs(sys.lambda[best] - pred)))
            best = q;
        used[static_cast<std::size_t>(best)] = true;
        acc += sys.X(best).dot(c) * sys.right.col(best);
      }
      return synthesize(acc, Complex(t, 0.0), K, m, res.x);
    };
  }
  HuddleResult h = huddled_integral(sum_over_S, m, nx, E, params.huddle);
  res.delta_sequence = h.deltas;
  res.huddle_converged = h.converged;
  huddle_part = h.limit / kTwoPi;
  res.huddle = std::move(h);

  res.reconstruction = termwise + huddle_part;
  res.termwise_vs_huddled = S.empty() ? max_abs(all_branches - res.reconstruction) : std::numeric_limits<double>::quiet_NaN();

  auto window_errors = [&](const CMat& R) {
    std::vector<WindowError> out;
    for (std::size_t w = 0; w < params.windows.size(); ++w) {
      double e = 0.0, nf = 0.0;
      for (std::size_t i = 0; i < res.x.size(); ++i) {
        if (window_of[i] != static_cast<int>(w)) continue;
        const auto c = static_cast<Eigen::Index>(i);
        e += res.xw[i] * (res.f_samples.col(c) - R.col(c)).squaredNorm();
        nf += res.xw[i] * res.f_samples.col(c).squaredNorm();
      }
      out.push_back({params.windows[w].first, params.windows[w].second, std::sqrt(e), std::sqrt(nf)});
    }
    return out;
  };
  res.errors = window_errors(res.reconstruction);
  for (int cut : params.extra_cuts) {
    CMat R = huddle_part;
    for (std::size_t bi = 0; bi < included.size(); ++bi)
      if (!S.count(included[bi]->p) && included[bi]->p <= (2 * cut + 1) * m) R += branch_x[bi];
    res.cut_errors.emplace_back(cut, window_errors(R));
  }

  for (std::size_t bi = 0; bi < included.size(); ++bi) {
    const auto& b = *included[bi];
    BranchRecord r;
    r.p = b.p;
    r.k = b.k;
    r.j = b.j;
    r.in_S = S.count(b.p) > 0;
    r.norm = l2_distance(branch_x[bi], CMat::Zero(m, nx), res.xw);
    res.branches.push_back(r);
  }

  // Shape of the truncation tail: the f-hat energy beyond the retained
  // frequencies plus the ||f||^2 / sqrt(s) term, s = K_branch + 1
  const double Omega = kTwoPi * (params.K_branch + 0.5);
  const auto wn = composite_nodes(panel_breaks(-Omega, Omega, {}, 0.5), gauss_legendre16());
  double kept = 0.0;
  for (const auto& q : wn) kept += q.w * f.fourier(q.x).squaredNorm();
  const double nf = f.norm();
  res.truncation_tail =
      std::sqrt(std::max(0.0, nf * nf - kept / kTwoPi) + nf * nf / std::sqrt(static_cast<double>(params.K_branch + 1)));
  return res;
}

TailBoundReport tail_bound_check(const BandSet& bs, const TailBoundOptions& opts) {
  if (!bs.labelled)
    throw ValidationError("UnlabelledBranch", "tail bound check needs labelled branches (no N0 <= K/2 was found)");
  TailBoundReport rep;
  const int m = bs.m;
  for (int s : opts.s_values) {
    if (s < bs.N0 || s > bs.K_lab)
      throw ValidationError("ConfigInvalid",
                            "s = " + std::to_string(s) + " must lie in [N0, K/2] = [" + std::to_string(bs.N0) + ", " +
                                std::to_string(bs.K_lab) + "]",
                            "s_values");
    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<std::size_t> pick_t(0, bs.t_grid.size() - 1);
    // at most six pairs, and never more than Z(s) holds within the labelled range
    const int available = 2 * (bs.K_lab - s + 1) * m;
    std::uniform_int_distribution<int> pick_size(1, std::min(6, available));
    std::uniform_int_distribution<int> pick_k(s, bs.K_lab);
    std::uniform_int_distribution<int> pick_j(1, m);
    std::uniform_int_distribution<int> pick_sign(0, 1);
    TailBoundRow row;
    row.s = s;
    for (int trial = 0; trial < opts.trials; ++trial) {
      const std::size_t i = pick_t(rng);
      const auto& sys = bs.systems[i];
      std::set<std::pair<int, int>> J;
      const int size = pick_size(rng);
      while (static_cast<int>(J.size()) < size) J.insert({pick_k(rng) * (pick_sign(rng) ? 1 : -1), pick_j(rng)});
      const auto r = static_cast<Eigen::Index>(J.size());
      const Eigen::Index D = sys.right.rows();
      CMat Psi(D, r), X(D, r);
      RVec binv = RVec::Constant(D, std::sqrt(static_cast<double>(s)));  // 1 / (1/sqrt(s))
      Eigen::Index c = 0;
      for (const auto& [k, j] : J) {
        const auto* b = bs.find(k, j);
        const int col = b->raw_index[i];
        Psi.col(c) = sys.right.col(col);
        X.col(c) = sys.X(col);
        binv[basis_index(k, j - 1, bs.K, m)] = 1.0 / (1.0 + 1.0 / std::sqrt(static_cast<double>(s)));
        ++c;
      }
      // sup_f ||Psi X^H f||^2 / (f^H B f) = lambda_max(L^H X^H B^-1 X L), Psi^H Psi = L L^H
      const CMat G = Psi.adjoint() * Psi;
      const CMat L = Eigen::LLT<CMat>(G).matrixL();
      const CMat M32 = L.adjoint() * (X.adjoint() * binv.asDiagonal() * X) * L;
      const CMat M33 = L.adjoint() * (X.adjoint() * X) * L;
      const double c32 = Eigen::SelfAdjointEigenSolver<CMat>(M32, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
      const double c33 = Eigen::SelfAdjointEigenSolver<CMat>(M33, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
      row.c32 = std::max(row.c32, c32);
      row.c33 = std::max(row.c33, c33);
    }
    row.c = std::max(row.c32, row.c33);
    rep.rows.push_back(row);
  }
  bool any_pair = false;
  for (const auto& a : rep.rows)
    for (const auto& b : rep.rows)
      if (b.s == 2 * a.s) {
        any_pair = true;
        rep.max_variation = std::max(rep.max_variation, std::abs(b.c - a.c) / a.c);
      }
  rep.stable = any_pair && rep.max_variation < 0.1;
  for (const auto& r : rep.rows) rep.stable = rep.stable && std::isfinite(r.c);
  return rep;
}

nlohmann::json expansion_report_to_json(const ExpansionResult& r) {
  using nlohmann::json;
  auto finite = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  auto windows = [](const std::vector<WindowError>& ws) {
    json arr = json::array();
    for (const auto& w : ws) arr.push_back({{"a", w.a}, {"b", w.b}, {"l2_error", w.l2_error}, {"l2_f", w.l2_f}});
    return arr;
  };
  json doc;
  doc["windows"] = windows(r.errors);
  doc["K_branch"] = r.K_branch;
  doc["delta_sequence"] = r.delta_sequence;
  doc["huddle_converged"] = r.huddle_converged;
  json norms = json::array();
  json branches = json::array();
  for (const auto& b : r.branches) {
    norms.push_back(b.norm);
    json e = {{"p", b.p}, {"norm", b.norm}, {"in_S", b.in_S}};
    e["k"] = b.k ? json(*b.k) : json(nullptr);
    e["j"] = b.j ? json(*b.j) : json(nullptr);
    branches.push_back(e);
  }
  doc["per_branch_norms"] = norms;
  doc["branches"] = branches;
  doc["K"] = r.K;
  doc["N0"] = r.N0;
  doc["N1"] = r.N1;
  doc["t_nodes"] = r.t_nodes;
  doc["quad_error"] = r.quad_error;
  doc["termwise_vs_summed"] = r.termwise_vs_summed;
  doc["termwise_vs_huddled"] = finite(r.termwise_vs_huddled);
  doc["truncation_tail"] = r.truncation_tail;
  doc["cuts"] = json::array();
  for (const auto& [c, ws] : r.cut_errors) doc["cuts"].push_back({{"K_branch", c}, {"windows", windows(ws)}});
  if (r.huddle) {
    doc["huddle"] = {{"order", r.huddle->order}, {"tail", finite(r.huddle->tail)}, {"converged", r.huddle->converged}};
  }
  return doc;
}

}  // namespace blochspec
