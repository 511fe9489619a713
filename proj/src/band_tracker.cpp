#include "blochspec/band_tracker.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

namespace blochspec {

int label_p(int k, int j, int m) { return k > 0 ? 2 * k * m + j : (2 * (-k) - 1) * m + j; }

std::pair<int, int> label_kj(int p, int m) {
  if (p <= m) throw ValidationError("InvalidLabel", "label p = " + std::to_string(p) + " has no (k, j) form");
  const int q = (p - 1) / m;
  const int j = (p - 1) % m + 1;
  const int k = q % 2 == 0 ? q / 2 : -(q + 1) / 2;
  return {k, j};
}

std::vector<double> uniform_t_grid(int N) {
  std::vector<double> t(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) t[static_cast<std::size_t>(i)] = -kPi + kTwoPi * (i + 1) / N;
  t.back() = kPi;
  return t;
}

const BandFunction* BandSet::find(int k, int j) const {
  for (const auto& b : bands)
    if (b.k && *b.k == k && b.j && *b.j == j) return &b;
  return nullptr;
}

const BandFunction* BandSet::find_p(int p) const {
  for (const auto& b : bands)
    if (b.p == p) return &b;
  return nullptr;
}

BlochEigenpair BandSet::pair(const BandFunction& band, std::size_t sample) const {
  BlochEigenpair out = systems[sample].pair(band.raw_index[sample]);
  out.p = band.p;
  return out;
}

Complex BandSet::leading(int k, int j, double t) const {
  return leading_term(n, k, Complex(t, 0.0) - kI * r, mu_shifted[j - 1]);
}

bool BandSet::near_suspect(double t) const {
  double cell = 0.0;
  for (std::size_t i = 1; i < t_grid.size(); ++i) cell = std::max(cell, t_grid[i] - t_grid[i - 1]);
  for (const auto& s : suspects) {
    // distance on the circle, so t = -pi and t = pi coincide
    const double lo = std::abs(wrap_quasimomentum(t - s.t_lo));
    const double hi = std::abs(wrap_quasimomentum(t - s.t_hi));
    const bool inside = t >= s.t_lo && t <= s.t_hi;
    if (inside || lo <= cell * (1.0 + 1e-9) || hi <= cell * (1.0 + 1e-9)) return true;
  }
  return false;
}

namespace {

struct Matching {
  std::vector<int> assigned;    // candidate index per branch
  std::vector<int> ambiguous;   // branch indices
};

// Greedy nearest assignment of predictions to candidates.
Matching greedy_match(const std::vector<Complex>& pred, const std::vector<Complex>& cand, double ratio) {
  const std::size_t B = pred.size();
  const std::size_t C = cand.size();
  std::vector<std::tuple<double, int, int>> pairs;
  pairs.reserve(B * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      pairs.emplace_back(std::abs(pred[b] - cand[c]), static_cast<int>(b), static_cast<int>(c));
  std::sort(pairs.begin(), pairs.end());
  Matching out;
  out.assigned.assign(B, -1);
  std::vector<bool> taken(C, false);
  std::size_t done = 0;
  for (const auto& [d, b, c] : pairs) {
    if (out.assigned[static_cast<std::size_t>(b)] >= 0 || taken[static_cast<std::size_t>(c)]) continue;
    out.assigned[static_cast<std::size_t>(b)] = c;
    taken[static_cast<std::size_t>(c)] = true;
    if (++done == B) break;
  }
  for (std::size_t b = 0; b < B; ++b) {
    const int a = out.assigned[b];
    const double d1 = std::abs(pred[b] - cand[static_cast<std::size_t>(a)]);
    const double floor = 1e-10 * (1.0 + std::abs(pred[b]));
    const Complex ca = cand[static_cast<std::size_t>(a)];
    // a rival equal to the chosen candidate to rounding gives the same value either way,
    // so it is not an ambiguity (exactly degenerate bands would otherwise refine forever)
    double d2 = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c)
      if (static_cast<int>(c) != a && std::abs(cand[c] - ca) > floor) d2 = std::min(d2, std::abs(pred[b] - cand[c]));
    if (d2 <= std::max(ratio * d1, floor)) out.ambiguous.push_back(static_cast<int>(b));
  }
  return out;
}

struct ContinuationState {
  std::vector<Complex> value;
  std::vector<Complex> velocity;
};

struct LocalSuspect {
  double t_lo, t_hi;
  std::vector<int> branches;
};

class Continuation {
 public:
  Continuation(std::function<CVec(double)> solver, int max_refine, double ratio)
      : solver_(std::move(solver)), max_refine_(max_refine), ratio_(ratio) {}

  // Moves the state from t_a to t_b, where the candidates are `cand`; returns the
  // candidate index chosen for each branch.
  std::vector<int> advance(ContinuationState& st, double t_a, double t_b, const std::vector<Complex>& cand,
                           int depth) {
    const double dt = t_b - t_a;
    std::vector<Complex> pred(st.value.size());
    for (std::size_t b = 0; b < pred.size(); ++b) pred[b] = st.value[b] + st.velocity[b] * dt;
    Matching mt = greedy_match(pred, cand, ratio_);
    if (!mt.ambiguous.empty() && depth < max_refine_) {
      const double t_m = 0.5 * (t_a + t_b);
      const CVec lm = solver_(t_m);
      std::vector<Complex> cm(lm.data(), lm.data() + lm.size());
      advance(st, t_a, t_m, cm, depth + 1);
      return advance(st, t_m, t_b, cand, depth + 1);
    }
    if (!mt.ambiguous.empty()) suspects.push_back({t_a, t_b, mt.ambiguous});
    for (std::size_t b = 0; b < pred.size(); ++b) {
      const Complex nv = cand[static_cast<std::size_t>(mt.assigned[b])];
      st.velocity[b] = (nv - st.value[b]) / dt;
      st.value[b] = nv;
    }
    return mt.assigned;
  }

  std::vector<LocalSuspect> suspects;

 private:
  std::function<CVec(double)> solver_;
  int max_refine_;
  double ratio_;
};

// Continues B branches across the grid; cand_idx[i] lists the eigensystem columns
// available at grid point i (exactly B of them). Returns raw column per branch per point.
std::vector<std::vector<int>> continue_set(const std::vector<EigenSystem>& systems,
                                           const std::vector<std::vector<int>>& cand_idx,
                                           const std::vector<double>& t_grid, Continuation& cont) {
  const std::size_t T = t_grid.size();
  const std::size_t B = cand_idx.empty() ? 0 : cand_idx[0].size();
  std::vector<std::vector<int>> raw(B, std::vector<int>(T, -1));
  if (B == 0) return raw;
  ContinuationState st;
  for (std::size_t b = 0; b < B; ++b) {
    raw[b][0] = cand_idx[0][b];
    st.value.push_back(systems[0].lambda[cand_idx[0][b]]);
    st.velocity.emplace_back(0.0, 0.0);
  }
  for (std::size_t i = 1; i < T; ++i) {
    std::vector<Complex> cand;
    for (int c : cand_idx[i]) cand.push_back(systems[i].lambda[c]);
    const auto assigned = cont.advance(st, t_grid[i - 1], t_grid[i], cand, 0);
    for (std::size_t b = 0; b < B; ++b) raw[b][i] = cand_idx[i][static_cast<std::size_t>(assigned[b])];
  }
  return raw;
}

double jump_threshold(const BandSet& bs, Complex lambda, double dt, double cmax) {
  const double s = std::max(std::pow(std::abs(lambda), 1.0 / bs.n), 1.0);
  const double lead = bs.n * std::pow(s, bs.n - 1) + (bs.n - 2) * cmax * std::pow(s, std::max(bs.n - 3, 0));
  return 10.0 * std::abs(dt) * (lead + cmax + 1.0);
}

}  // namespace

BandSet track_bands(const OperatorSpec& spec, int K, const std::vector<double>& t_grid, const TrackOptions& opts,
                    bool force) {
  return track_bands(spec, solve_many(spec, t_grid, K, opts.solve), t_grid, opts, force);
}

BandSet track_bands(const OperatorSpec& spec, std::vector<EigenSystem> systems, const std::vector<double>& t_grid,
                    const TrackOptions& opts, bool force) {
  if (t_grid.size() < 2) throw ValidationError("ConfigInvalid", "t grid needs at least two points", "t_grid_size");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1])) throw ValidationError("ConfigInvalid", "t grid must increase", "t_grid");

  BandSet bs;
  bs.n = spec.n;
  bs.m = spec.m;
  bs.K = systems.front().K;
  bs.K_lab = bs.K / 2;
  bs.t_grid = t_grid;
  const int m = spec.m;
  const int K = bs.K;
  const std::size_t T = t_grid.size();

  const ReducedSpec red = reduce_p1(spec);
  bs.r = red.r;
  bs.mu_shifted = compute_mean_matrix(red.reduced, force).mu;
  double cmax = 0.0;
  for (Eigen::Index j = 0; j < bs.mu_shifted.size(); ++j) cmax = std::max(cmax, std::abs(bs.mu_shifted[j]));

  // Proximity labelling at every t. good[t][(k + K) * m + j - 1] is set when the
  // eigenvalue nearest to the leading term is mutually nearest and within a third
  // of the distance to the closest other leading term.
  const int L = m * (2 * K + 1);
  std::vector<std::vector<int>> owner(T, std::vector<int>(static_cast<std::size_t>(L), -1));
  std::vector<std::vector<bool>> good(T, std::vector<bool>(static_cast<std::size_t>(L), false));
  for (std::size_t i = 0; i < T; ++i) {
    const auto& sys = systems[i];
    const int dim = sys.size();
    std::vector<Complex> lead(static_cast<std::size_t>(L));
    for (int k = -K; k <= K; ++k)
      for (int j = 1; j <= m; ++j) lead[static_cast<std::size_t>((k + K) * m + j - 1)] = bs.leading(k, j, t_grid[i]);
    std::vector<int> near_lead(static_cast<std::size_t>(dim));
    for (int p = 0; p < dim; ++p) {
      double best = std::numeric_limits<double>::infinity();
      for (int l = 0; l < L; ++l) {
        const double d = std::abs(sys.lambda[p] - lead[static_cast<std::size_t>(l)]);
        if (d < best) {
          best = d;
          near_lead[static_cast<std::size_t>(p)] = l;
        }
      }
    }
    for (int l = 0; l < L; ++l) {
      int best_p = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int p = 0; p < dim; ++p) {
        const double d = std::abs(sys.lambda[p] - lead[static_cast<std::size_t>(l)]);
        if (d < best) {
          best = d;
          best_p = p;
        }
      }
      double sep = std::numeric_limits<double>::infinity();
      for (int l2 = 0; l2 < L; ++l2)
        if (l2 != l) sep = std::min(sep, std::abs(lead[static_cast<std::size_t>(l)] - lead[static_cast<std::size_t>(l2)]));
      if (best_p >= 0 && near_lead[static_cast<std::size_t>(best_p)] == l) {
        owner[i][static_cast<std::size_t>(l)] = best_p;
        good[i][static_cast<std::size_t>(l)] = best < sep / 3.0;
      }
    }
  }

  auto all_good = [&](int k) {
    for (std::size_t i = 0; i < T; ++i)
      for (int j = 1; j <= m; ++j)
        for (int s : {-1, 1})
          if (!good[i][static_cast<std::size_t>((s * k + K) * m + j - 1)]) return false;
    return true;
  };
  bs.N0 = bs.K_lab + 1;
  for (int k0 = bs.K_lab; k0 >= 1; --k0) {
    if (!all_good(k0)) break;
    bs.N0 = k0;
  }
  bs.labelled = bs.N0 <= bs.K_lab;
  bs.N1 = (2 * bs.N0 - 1) * m;

  std::vector<std::vector<bool>> used(T);
  for (std::size_t i = 0; i < T; ++i) used[i].assign(static_cast<std::size_t>(systems[i].size()), false);

  for (int ak = bs.N0; ak <= bs.K_lab; ++ak)
    for (int s : {-1, 1})
      for (int j = 1; j <= m; ++j) {
        const int k = s * ak;
        BandFunction b;
        b.p = label_p(k, j, m);
        b.k = k;
        b.j = j;
        for (std::size_t i = 0; i < T; ++i) {
          const int raw = owner[i][static_cast<std::size_t>((k + K) * m + j - 1)];
          b.raw_index.push_back(raw);
          used[i][static_cast<std::size_t>(raw)] = true;
        }
        bs.bands.push_back(std::move(b));
      }

  // Remaining eigenvalues: the N1 smallest form the low branches, the rest the tail.
  std::vector<std::vector<int>> low_idx(T), tail_idx(T);
  for (std::size_t i = 0; i < T; ++i) {
    std::vector<int> rest;
    for (int p = 0; p < systems[i].size(); ++p)
      if (!used[i][static_cast<std::size_t>(p)]) rest.push_back(p);
    // systems are sorted by |lambda|, so `rest` already is
    low_idx[i].assign(rest.begin(), rest.begin() + bs.N1);
    tail_idx[i].assign(rest.begin() + bs.N1, rest.end());
  }

  auto solver = [&](double t) { return solve_eigensystem(spec, Complex(t, 0.0), K, opts.solve).lambda; };
  Continuation cont(solver, opts.max_refine, opts.ambiguity_ratio);
  const auto low_raw = continue_set(systems, low_idx, t_grid, cont);
  const auto low_suspects = cont.suspects;
  cont.suspects.clear();
  const auto tail_raw = continue_set(systems, tail_idx, t_grid, cont);
  const auto tail_suspects = cont.suspects;

  // Low branches ordered by |lambda| at the grid point nearest t_ref.
  std::size_t iref = 0;
  for (std::size_t i = 1; i < T; ++i)
    if (std::abs(t_grid[i] - opts.t_ref) < std::abs(t_grid[iref] - opts.t_ref)) iref = i;
  std::vector<int> order(low_raw.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const Complex la = systems[iref].lambda[low_raw[static_cast<std::size_t>(a)][iref]];
    const Complex lb = systems[iref].lambda[low_raw[static_cast<std::size_t>(b)][iref]];
    if (std::abs(la) != std::abs(lb)) return std::abs(la) < std::abs(lb);
    return std::arg(la) < std::arg(lb);
  });
  std::vector<int> low_label(low_raw.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    BandFunction b;
    b.p = static_cast<int>(r) + 1;
    b.raw_index = low_raw[static_cast<std::size_t>(order[r])];
    low_label[static_cast<std::size_t>(order[r])] = b.p;
    bs.bands.push_back(std::move(b));
  }
  const int tail0 = m * (2 * bs.K_lab + 1);
  for (std::size_t r = 0; r < tail_raw.size(); ++r) {
    BandFunction b;
    b.p = tail0 + static_cast<int>(r) + 1;
    b.tail = true;
    b.raw_index = tail_raw[r];
    bs.bands.push_back(std::move(b));
  }
  for (const auto& s : low_suspects) {
    CrossingSuspect cs{s.t_lo, s.t_hi, {}, true};
    for (int b : s.branches) cs.branches.push_back(low_label[static_cast<std::size_t>(b)]);
    bs.suspects.push_back(cs);
  }
  for (const auto& s : tail_suspects) {
    CrossingSuspect cs{s.t_lo, s.t_hi, {}, true};
    for (int b : s.branches) cs.branches.push_back(tail0 + b + 1);
    bs.suspects.push_back(cs);
  }

  std::sort(bs.bands.begin(), bs.bands.end(), [](const BandFunction& a, const BandFunction& b) { return a.p < b.p; });

  // Fill samples and continuity certificates.
  for (auto& b : bs.bands) {
    for (std::size_t i = 0; i < T; ++i) {
      const int raw = b.raw_index[i];
      b.t.push_back(t_grid[i]);
      b.lambda.push_back(systems[i].lambda[raw]);
      b.abs_alpha.push_back(std::abs(systems[i].alpha[raw]));
      if (i == 0) {
        b.jump_ok.push_back(true);
        b.threshold.push_back(0.0);
        continue;
      }
      const double jump = std::abs(b.lambda[i] - b.lambda[i - 1]);
      const double thr = jump_threshold(bs, b.lambda[i], t_grid[i] - t_grid[i - 1], cmax);
      b.threshold.push_back(thr);
      b.jump_ok.push_back(jump <= thr);
      b.max_jump = std::max(b.max_jump, jump);
      b.certified = b.certified && jump <= thr;
    }
  }

  // Near-degeneracies: branch pairs whose difference passes close to zero inside a cell
  // or vanishes at a grid point.
  const std::size_t nb = bs.bands.size();
  for (std::size_t a = 0; a < nb; ++a)
    for (std::size_t c = a + 1; c < nb; ++c) {
      const auto& A = bs.bands[a];
      const auto& C = bs.bands[c];
      for (std::size_t i = 0; i < T; ++i) {
        const Complex d0 = A.lambda[i] - C.lambda[i];
        const double scale = 1.0 + std::abs(A.lambda[i]);
        if (std::abs(d0) <= 1e-8 * scale) {
          bs.suspects.push_back({t_grid[i], t_grid[i], {A.p, C.p}, false});
          continue;
        }
        if (i + 1 == T) continue;
        const Complex d1 = A.lambda[i + 1] - C.lambda[i + 1];
        const Complex dd = d1 - d0;
        const double s = std::clamp(-std::real(std::conj(dd) * d0) / std::norm(dd), 0.0, 1.0);
        const double dmin = std::abs(d0 + s * dd);
        if (s > 0.0 && s < 1.0 && dmin <= 0.05 * (std::abs(d0) + std::abs(d1)))
          bs.suspects.push_back({t_grid[i], t_grid[i + 1], {A.p, C.p}, false});
      }
    }
  std::sort(bs.suspects.begin(), bs.suspects.end(), [](const CrossingSuspect& x, const CrossingSuspect& y) {
    if (x.t_lo != y.t_lo) return x.t_lo < y.t_lo;
    if (x.t_hi != y.t_hi) return x.t_hi < y.t_hi;
    return x.branches < y.branches;
  });
  bs.systems = std::move(systems);
  return bs;
}

void write_band_csv(const BandSet& bands, std::ostream& os) {
  os << "p,k,j,t,re_lambda,im_lambda,abs_alpha,continuity_flag\n";
  char buf[256];
  for (const auto& b : bands.bands) {
    for (std::size_t i = 0; i < b.t.size(); ++i) {
      os << b.p << ',';
      if (b.k) os << *b.k;
      os << ',';
      if (b.j) os << *b.j;
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g,%d\n", b.t[i], b.lambda[i].real(), b.lambda[i].imag(),
                    b.abs_alpha[i], b.jump_ok[i] ? 1 : 0);
      os << buf;
    }
  }
}

namespace {

void check_range(int k_lo, int k_hi, int K_lab) {
  if (k_hi - k_lo < 4)
    throw ValidationError("InsufficientRange", "need k_hi - k_lo >= 4 for an exponent fit", "k_range");
  if (k_hi > K_lab) throw ValidationError("InsufficientRange", "k_hi exceeds K/2", "k_range");
}

void fit(ResidualFit& f, double scale) {
  std::vector<double> xs, ys;
  std::map<int, double> worst;
  for (const auto& r : f.rows) worst[std::abs(r.k)] = std::max(worst[std::abs(r.k)], r.residual);
  double top = 0.0;
  for (const auto& [k, v] : worst) top = std::max(top, v);
  if (top <= scale) {
    f.exact = true;
    f.exponent = -std::numeric_limits<double>::infinity();
    f.pass = true;
    return;
  }
  for (const auto& [k, v] : worst) {
    xs.push_back(std::log(static_cast<double>(k)));
    ys.push_back(std::log(std::max(v, std::numeric_limits<double>::min())));
  }
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  f.exponent = sxy / sxx;
  f.pass = f.exponent <= f.limit;
}

}  // namespace

ResidualFit verify_eigenvalue_asymptotics(const BandSet& bs, int k_lo, int k_hi, double fit_slack) {
  check_range(k_lo, k_hi, bs.K_lab);
  ResidualFit f;
  f.limit = bs.n - 3 + fit_slack;
  double lead_max = 0.0;
  for (int ak = k_lo; ak <= k_hi; ++ak)
    for (int s : {-1, 1})
      for (int j = 1; j <= bs.m; ++j) {
        const int k = s * ak;
        const BandFunction* b = bs.find(k, j);
        if (!b) throw NumericalError("UnlabelledBranch", "branch (" + std::to_string(k) + "," + std::to_string(j) +
                                                             ") is not labelled; N0 = " + std::to_string(bs.N0));
        double rho = 0.0;
        for (std::size_t i = 0; i < b->t.size(); ++i) {
          const Complex lead = bs.leading(k, j, b->t[i]);
          rho = std::max(rho, std::abs(b->lambda[i] - lead));
          lead_max = std::max(lead_max, std::abs(lead));
        }
        f.rows.push_back({k, j, rho});
      }
  fit(f, 1e-12 * lead_max);
  return f;
}

std::pair<ResidualFit, ResidualFit> verify_eigenfunction_asymptotics(const BandSet& bs, const MeanMatrixData& mean,
                                                                     int k_lo, int k_hi, double fit_slack) {
  check_range(k_lo, k_hi, bs.K_lab);
  ResidualFit fpsi, fx;
  fpsi.limit = fx.limit = -1.0 + fit_slack;
  const int m = bs.m;
  for (int ak = k_lo; ak <= k_hi; ++ak)
    for (int s : {-1, 1})
      for (int j = 1; j <= m; ++j) {
        const int k = s * ak;
        const BandFunction* b = bs.find(k, j);
        if (!b) throw NumericalError("UnlabelledBranch", "branch (" + std::to_string(k) + "," + std::to_string(j) +
                                                             ") is not labelled; N0 = " + std::to_string(bs.N0));
        double rpsi = 0.0, rx = 0.0;
        for (std::size_t i = 0; i < b->t.size(); ++i) {
          const auto& sys = bs.systems[i];
          const int raw = b->raw_index[i];
          const int at = basis_index(k, 0, bs.K, m);
          CVec vref = CVec::Zero(sys.right.rows());
          CVec uref = CVec::Zero(sys.right.rows());
          vref.segment(at, m) = mean.v.col(j - 1) * e_norm(b->t[i]);
          uref.segment(at, m) = mean.u.col(j - 1) / e_norm(b->t[i]);
          const CVec psi = sys.right.col(raw);
          const Complex ov = vref.dot(psi);
          const Complex phase = ov == Complex(0.0, 0.0) ? Complex(1.0, 0.0) : std::conj(ov) / std::abs(ov);
          rpsi = std::max(rpsi, (psi * phase - vref).norm());
          rx = std::max(rx, (sys.X(raw) * phase - uref).norm());
        }
        fpsi.rows.push_back({k, j, rpsi});
        fx.rows.push_back({k, j, rx});
      }
  fit(fpsi, 1e-10);
  fit(fx, 1e-10);
  return {fpsi, fx};
}

}  // namespace blochspec
