#include "blochspec/singularity.hpp"

#include <algorithm>
#include <memory>
#include <mutex>
#include <random>
#include <set>

#include "blochspec/parallel.hpp"

namespace blochspec {

Region default_scan_region(const BandSet& bs, int k_cap) {
  double R = 0.0;
  for (const auto& b : bs.bands)
    if (b.p <= bs.N1)
      for (const auto& l : b.lambda) R = std::max(R, std::abs(l));
  R = std::max(10.0, 1.1 * R);
  R = std::min(R, std::pow(kTwoPi * (k_cap + 0.5), bs.n));
  return Region{-R, R, -R, R};
}

double projection_norm(const BlochEigenpair& pair) {
  if (pair.flagged || std::abs(pair.alpha) == 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / std::abs(pair.alpha);
}

CVec rank1_projection_apply(const BlochEigenpair& pair, const CVec& f) {
  if (pair.flagged)
    throw NumericalError("FlaggedPair", "projection requested for a pair with |alpha| below the floor");
  return pair.X.dot(f) * pair.psi;
}

CVec projection_apply(const EigenSystem& sys, const std::vector<int>& J, const CVec& f) {
  CVec out = CVec::Zero(sys.right.rows());
  for (int p : J) {
    if (sys.flagged[static_cast<std::size_t>(p)])
      throw NumericalError("FlaggedPair", "projection requested for a pair with |alpha| below the floor");
    out += sys.X(p).dot(f) * sys.right.col(p);
  }
  return out;
}

double projection_operator_norm(const EigenSystem& sys, const std::vector<int>& J) {
  if (J.empty()) return 0.0;
  const Eigen::Index d = sys.right.rows();
  const auto r = static_cast<Eigen::Index>(J.size());
  CMat Psi(d, r), X(d, r);
  for (Eigen::Index c = 0; c < r; ++c) {
    const int p = J[static_cast<std::size_t>(c)];
    if (sys.flagged[static_cast<std::size_t>(p)]) return std::numeric_limits<double>::infinity();
    Psi.col(c) = sys.right.col(p);
    X.col(c) = sys.X(p);
  }
  // ||Psi X^H|| = ||R1 R2^H|| for thin QR factors
  Eigen::HouseholderQR<CMat> q1(Psi), q2(X);
  const CMat R1 = q1.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  const CMat R2 = q2.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<CMat> svd(R1 * R2.adjoint());
  return svd.singularValues()[0];
}

double empirical_projection_norm(const BlochEigenpair& pair, int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const Eigen::Index d = pair.psi.size();
  const double psi_norm = pair.psi.norm();
  double best = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    CVec f(d);
    for (Eigen::Index i = 0; i < d; ++i) f[i] = Complex(normal(rng), normal(rng));
    f.normalize();
    // one step of power iteration on A^H A, A f = (f, X) Psi
    const Complex c = pair.X.dot(f);
    CVec g = pair.X * (c * psi_norm * psi_norm);
    if (g.norm() > 0.0) f = g.normalized();
    best = std::max(best, std::abs(pair.X.dot(f)) * psi_norm);
  }
  return best;
}

ProjectionScanReport bounded_projection_scan(const BandSet& bs, const ProjectionScanOptions& opts) {
  if (!bs.labelled)
    throw ValidationError("UnlabelledBranch", "projection scan needs labelled branches (no N0 <= K/2 was found)");
  const std::size_t T = bs.t_grid.size();

  double M = 0.0;
  double Mmax = std::numeric_limits<double>::infinity();
  for (const auto& b : bs.bands) {
    for (std::size_t i = 0; i < T; ++i) {
      const double mag = std::abs(b.lambda[i]);
      if (b.p <= bs.N1) M = std::max(M, mag);
      if (b.k && std::abs(*b.k) == bs.K_lab) Mmax = std::min(Mmax, mag);
    }
  }
  ProjectionScanReport rep;
  rep.M_threshold = opts.M_threshold.value_or(M);
  rep.M_max = opts.M_max.value_or(Mmax);
  rep.trials = opts.trials;

  // trusted eigenvalues per grid point: labelled, N0 <= |k| <= K/2, inside the window
  struct Point {
    Complex lambda;
    int column;
  };
  std::vector<std::vector<Point>> trusted(T);
  double re_lo = 1e300, re_hi = -1e300, im_lo = 1e300, im_hi = -1e300;
  for (const auto& b : bs.bands) {
    if (!b.k) continue;
    for (std::size_t i = 0; i < T; ++i) {
      const double mag = std::abs(b.lambda[i]);
      if (mag <= rep.M_threshold || mag >= rep.M_max) continue;
      trusted[i].push_back({b.lambda[i], b.raw_index[i]});
      re_lo = std::min(re_lo, b.lambda[i].real());
      re_hi = std::max(re_hi, b.lambda[i].real());
      im_lo = std::min(im_lo, b.lambda[i].imag());
      im_hi = std::max(im_hi, b.lambda[i].imag());
    }
  }
  std::vector<Complex> pool;
  for (std::size_t i = 0; i < T; ++i) {
    std::sort(trusted[i].begin(), trusted[i].end(),
              [](const Point& a, const Point& b) { return a.column < b.column; });
    for (const auto& p : trusted[i]) pool.push_back(p.lambda);
  }
  if (pool.empty()) {
    rep.bounded = true;
    return rep;
  }
  const double pad_re = 0.05 * std::max(re_hi - re_lo, 1.0);
  const double pad_im = 0.05 * std::max(im_hi - im_lo, 1.0);

  struct Rect {
    double x0, x1, y0, y1;  // [x0, x1) x [y0, y1)
  };
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<Rect>> unions(static_cast<std::size_t>(opts.trials));
  for (auto& u : unions) {
    const int count = 1 + static_cast<int>(unit(rng) * 3.0);
    for (int r = 0; r < count; ++r) {
      if (unit(rng) < 0.5) {
        double xa = re_lo - pad_re + unit(rng) * (re_hi - re_lo + 2 * pad_re);
        double xb = re_lo - pad_re + unit(rng) * (re_hi - re_lo + 2 * pad_re);
        double ya = im_lo - pad_im + unit(rng) * (im_hi - im_lo + 2 * pad_im);
        double yb = im_lo - pad_im + unit(rng) * (im_hi - im_lo + 2 * pad_im);
        u.push_back({std::min(xa, xb), std::max(xa, xb), std::min(ya, yb), std::max(ya, yb)});
      } else {
        // a small box around one trusted eigenvalue, to isolate single projections
        const Complex c = pool[std::min(pool.size() - 1, static_cast<std::size_t>(unit(rng) * pool.size()))];
        const double h = std::abs(c) * std::pow(10.0, -3.0 + 2.5 * unit(rng));
        u.push_back({c.real() - h, c.real() + h, c.imag() - h, c.imag() + h});
      }
    }
  }

  std::vector<double> best(T, 0.0);
  std::vector<int> evals(T, 0);
  parallel_for(T, [&](std::size_t i) {
    for (const auto& u : unions) {
      std::vector<int> J;
      for (const auto& p : trusted[i]) {
        for (const auto& r : u) {
          if (p.lambda.real() >= r.x0 && p.lambda.real() < r.x1 && p.lambda.imag() >= r.y0 &&
              p.lambda.imag() < r.y1) {
            J.push_back(p.column);
            break;
          }
        }
      }
      if (J.empty()) continue;
      ++evals[i];
      best[i] = std::max(best[i], projection_operator_norm(bs.systems[i], J));
    }
  });
  for (std::size_t i = 0; i < T; ++i) {
    rep.evaluations += evals[i];
    if (best[i] > rep.sup) {
      rep.sup = best[i];
      rep.t_at_sup = bs.t_grid[i];
    }
  }
  rep.bounded = rep.sup < opts.bound_cap;
  return rep;
}

PowerFit fit_power_law(const std::function<double(double)>& value, double t0, double delta0, int levels) {
  if (levels < 5) throw ValidationError("ConfigInvalid", "exponent fits need at least 5 levels", "levels");
  std::vector<double> xs, ys;
  PowerFit fit;
  fit.min_value = std::numeric_limits<double>::infinity();
  fit.max_value = 0.0;
  for (int l = 0; l < levels; ++l) {
    const double d = delta0 * std::ldexp(1.0, -l);
    for (double s : {-1.0, 1.0}) {
      double v = value(t0 + s * d);
      fit.min_value = std::min(fit.min_value, v);
      fit.max_value = std::max(fit.max_value, v);
      if (!(v > 0.0) || !std::isfinite(v)) v = std::isfinite(v) ? 1e-300 : 1e300;
      xs.push_back(std::log(d));
      ys.push_back(std::log(v));
    }
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / n;
    my += ys[i] / n;
  }
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  fit.slope = sxy / sxx;
  const double ss_res = std::max(0.0, syy - fit.slope * sxy);
  fit.r2 = syy <= 1e-12 * n ? 1.0 : 1.0 - ss_res / syy;
  fit.log_spread = *std::max_element(ys.begin(), ys.end()) - *std::min_element(ys.begin(), ys.end());
  return fit;
}

BlowupFit fit_blowup_exponent(const std::function<double(double)>& abs_alpha, double t0, double delta0, int levels) {
  const PowerFit p = fit_power_law(abs_alpha, t0, delta0, levels);
  BlowupFit out;
  out.beta = p.slope;
  out.fit_quality = p.r2;
  out.poor = p.r2 < 0.9 && p.log_spread > 0.1;
  out.sup_inverse = p.min_value > 0.0 ? 1.0 / p.min_value : std::numeric_limits<double>::infinity();
  return out;
}

std::string to_string(SingularityClass c) {
  switch (c) {
    case SingularityClass::regular_multiple: return "regular_multiple";
    case SingularityClass::spectral_singularity: return "spectral_singularity";
    case SingularityClass::essential_spectral_singularity: return "essential_spectral_singularity";
    case SingularityClass::undetermined: return "undetermined";
  }
  return "undetermined";
}

PointClassification classify_point(const BranchProbe& probe, double t0, const ClassifyOptions& opts) {
  PointClassification pc;
  pc.t0 = t0;
  pc.delta0 = opts.delta0;
  pc.alpha_fit = fit_blowup_exponent(probe.abs_alpha, t0, opts.delta0, opts.levels);
  pc.beta_g = -std::numeric_limits<double>::infinity();
  for (const auto& g : probe.g) {
    const PowerFit f = fit_power_law(g, t0, opts.delta0, opts.levels);
    // g blows up like |t - t0|^{-beta_g}
    if (-f.slope > pc.beta_g) {
      pc.beta_g = -f.slope;
      pc.fit_quality_g = f.r2;
    }
  }
  if (probe.g.empty()) pc.beta_g = 0.0;

  if (pc.alpha_fit.poor) {
    pc.cls = SingularityClass::undetermined;
    return pc;
  }
  const bool blows_up = pc.alpha_fit.beta > opts.beta_tol || pc.alpha_fit.sup_inverse >= opts.bound_cap;
  if (!blows_up) {
    pc.cls = SingularityClass::regular_multiple;
  } else if (pc.beta_g >= 1.0 - opts.ess_margin) {
    pc.cls = SingularityClass::essential_spectral_singularity;
    pc.integrable = false;
  } else {
    pc.cls = SingularityClass::spectral_singularity;
  }
  return pc;
}

void assemble_sets(SingularityReport& report) {
  report.E.clear();
  report.S.clear();
  report.S_i.clear();
  report.S_ij.clear();
  report.Lambda.clear();
  constexpr double merge = 1e-9;
  for (const auto& me : report.multiple_eigenvalues)
    for (const auto& e : me.entries)
      if (e.cls == SingularityClass::essential_spectral_singularity) report.E.push_back(e.t0);
  std::sort(report.E.begin(), report.E.end());
  report.E.erase(std::unique(report.E.begin(), report.E.end(),
                             [&](double a, double b) { return std::abs(a - b) <= merge; }),
                 report.E.end());

  std::set<int> all;
  for (std::size_t i = 0; i < report.E.size(); ++i) {
    const int key = static_cast<int>(i) + 1;
    std::set<int> used;
    auto& bundles = report.S_ij[key];
    auto& lambdas = report.Lambda[key];
    for (const auto& me : report.multiple_eigenvalues) {
      for (const auto& e : me.entries) {
        if (e.cls != SingularityClass::essential_spectral_singularity) continue;
        if (std::abs(e.t0 - report.E[i]) > merge) continue;
        std::vector<int> bundle;
        for (int p : e.branches)
          if (used.insert(p).second) bundle.push_back(p);  // a branch meets one Lambda_j(t_i)
        if (bundle.empty()) continue;
        std::sort(bundle.begin(), bundle.end());
        lambdas.push_back(me.a);
        bundles[static_cast<int>(lambdas.size())] = bundle;
      }
    }
    report.S_i[key] = std::vector<int>(used.begin(), used.end());
    all.insert(used.begin(), used.end());
  }
  report.S.assign(all.begin(), all.end());
}

namespace {

struct ProbeSample {
  double abs_alpha = 0.0;
  std::vector<double> g;
};

std::vector<int> nearest_columns(const EigenSystem& sys, Complex a, int count) {
  std::vector<int> idx(static_cast<std::size_t>(sys.size()));
  for (int p = 0; p < sys.size(); ++p) idx[static_cast<std::size_t>(p)] = p;
  const auto c = static_cast<std::size_t>(std::clamp(count, 1, sys.size()));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(c), idx.end(),
                    [&](int x, int y) { return std::abs(sys.lambda[x] - a) < std::abs(sys.lambda[y] - a); });
  idx.resize(c);
  return idx;
}

}  // namespace

BranchProbe make_branch_probe(const OperatorSpec& spec, Complex a, int cluster, int K,
                              const std::vector<TestFunction>& probes) {
  struct State {
    OperatorSpec spec;
    Complex a;
    int cluster;
    int K;
    std::vector<TestFunction> probes;
    std::mutex mu;
    std::map<double, ProbeSample> cache;

    const ProbeSample& at(double t) {
      {
        std::lock_guard lock(mu);
        auto it = cache.find(t);
        if (it != cache.end()) return it->second;
      }
      ProbeSample s;
      const auto sys = solve_eigensystem(spec, Complex(t, 0.0), K);
      const auto cols = nearest_columns(sys, a, cluster);
      s.abs_alpha = std::numeric_limits<double>::infinity();
      for (int p : cols) s.abs_alpha = std::min(s.abs_alpha, std::abs(sys.alpha[p]));
      for (const auto& f : probes) {
        const CVec c = f.bloch_coefficients(t, K);
        double g = 0.0;
        for (int p : cols) g = std::max(g, std::abs(sys.X(p).dot(c)) * sys.right.col(p).norm());
        s.g.push_back(g);
      }
      std::lock_guard lock(mu);
      return cache.emplace(t, std::move(s)).first->second;
    }
  };
  auto st = std::make_shared<State>();
  st->spec = spec;
  st->a = a;
  st->cluster = cluster;
  st->K = K;
  st->probes = probes;
  BranchProbe probe;
  probe.abs_alpha = [st](double t) { return st->at(t).abs_alpha; };
  for (std::size_t i = 0; i < probes.size(); ++i) probe.g.push_back([st, i](double t) { return st->at(t).g[i]; });
  return probe;
}

SingularityReport classify_singularities(const OperatorSpec& spec, const DegeneracyCatalog& catalog,
                                         const BandSet& bands, const std::vector<TestFunction>& probes,
                                         const ClassifyOptions& opts) {
  SingularityReport report;
  report.bound_cap = opts.bound_cap;
  report.ess_margin = opts.ess_margin;

  struct Job {
    std::size_t entry;
    double t0;
  };
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < catalog.entries.size(); ++e) {
    const auto& ce = catalog.entries[e];
    MultipleEigenvalueReport me;
    me.a = ce.a;
    me.A = ce.A;
    std::sort(me.A.begin(), me.A.end());
    for (double t0 : me.A) jobs.push_back({e, t0});
    report.multiple_eigenvalues.push_back(std::move(me));
  }

  std::vector<PointClassification> results(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t ji) {
    const auto& job = jobs[ji];
    const Complex a = catalog.entries[job.entry].a;
    const double scale = std::max(1.0, std::abs(a));

    const auto sys0 = solve_eigensystem(spec, Complex(job.t0, 0.0), opts.K);
    int mult = 0;
    for (int p = 0; p < sys0.size(); ++p) mult += std::abs(sys0.lambda[p] - a) <= opts.cluster_tol * scale;
    const int cluster = std::max(mult, 1);

    // keep the fit window inside half the gap to the nearest other point of A
    double gap = std::numeric_limits<double>::infinity();
    for (double s : catalog.A) {
      const double d = std::abs(wrap_quasimomentum(s - job.t0));
      if (d > 1e-9) gap = std::min(gap, d);
    }
    ClassifyOptions local = opts;
    local.delta0 = std::min(opts.delta0, 0.45 * gap);

    const auto probe = make_branch_probe(spec, a, cluster, opts.K, probes);
    PointClassification pc = classify_point(probe, job.t0, local);
    pc.multiplicity = mult;

    // branch labels: the bands closest to a at the nearest grid point
    std::size_t i0 = 0;
    for (std::size_t i = 1; i < bands.t_grid.size(); ++i)
      if (std::abs(wrap_quasimomentum(bands.t_grid[i] - job.t0)) <
          std::abs(wrap_quasimomentum(bands.t_grid[i0] - job.t0)))
        i0 = i;
    std::vector<std::pair<double, int>> dist;
    for (const auto& b : bands.bands) dist.emplace_back(std::abs(b.lambda[i0] - a), b.p);
    std::sort(dist.begin(), dist.end());
    for (int c = 0; c < cluster && c < static_cast<int>(dist.size()); ++c)
      pc.branches.push_back(dist[static_cast<std::size_t>(c)].second);
    std::sort(pc.branches.begin(), pc.branches.end());
    results[ji] = std::move(pc);
  });
  for (std::size_t ji = 0; ji < jobs.size(); ++ji)
    report.multiple_eigenvalues[jobs[ji].entry].entries.push_back(std::move(results[ji]));
  assemble_sets(report);
  return report;
}

std::vector<TestFunction> probe_family(const TestFunction& f, int randomized, std::uint64_t seed) {
  std::vector<TestFunction> out{f};
  for (int r = 0; r < randomized; ++r)
    out.push_back(TestFunction::random_smooth(f.lo(), f.hi(), f.m(), seed + static_cast<std::uint64_t>(r)));
  return out;
}

nlohmann::json singularity_report_to_json(const SingularityReport& report) {
  using nlohmann::json;
  auto finite = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  json doc;
  doc["multiple_eigenvalues"] = json::array();
  for (const auto& me : report.multiple_eigenvalues) {
    json m;
    m["a"] = {me.a.real(), me.a.imag()};
    m["A"] = me.A;
    m["entries"] = json::array();
    for (const auto& e : me.entries) {
      m["entries"].push_back({{"t0", e.t0},
                              {"beta", e.alpha_fit.beta},
                              {"beta_g", finite(e.beta_g)},
                              {"class", to_string(e.cls)},
                              {"branches", e.branches},
                              {"multiplicity", e.multiplicity},
                              {"fit_quality", e.alpha_fit.fit_quality},
                              {"fit_quality_g", e.fit_quality_g},
                              {"sup_inv_alpha", finite(e.alpha_fit.sup_inverse)},
                              {"delta0", e.delta0},
                              {"integrable", e.integrable}});
    }
    doc["multiple_eigenvalues"].push_back(std::move(m));
  }
  doc["E"] = report.E;
  doc["S"] = report.S;
  doc["S_i"] = json::object();
  doc["S_ij"] = json::object();
  for (const auto& [i, s] : report.S_i) doc["S_i"][std::to_string(i)] = s;
  for (const auto& [i, bundles] : report.S_ij) {
    json b = json::object();
    for (const auto& [j, s] : bundles) b[std::to_string(j)] = s;
    doc["S_ij"][std::to_string(i)] = b;
  }
  doc["bound_cap"] = report.bound_cap;
  doc["ess_margin"] = report.ess_margin;
  return doc;
}

}  // namespace blochspec
