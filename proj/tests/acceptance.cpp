// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// With --expect-fail the exit status is 0 exactly when the failing set equals the given list.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "blochspec/cli.hpp"
#include "blochspec/expansion.hpp"
#include "blochspec/floquet.hpp"
#include "blochspec/galerkin.hpp"
#include "blochspec/operator_model.hpp"
#include "blochspec/run_config.hpp"
#include "blochspec/singularity.hpp"

using namespace blochspec;
using nlohmann::json;

namespace {

const std::string kData = BLOCHSPEC_DATA_DIR;
std::string g_out = "acceptance_out";

OperatorSpec shipped(const std::string& name) { return load_operator(kData + "/operators/" + name + ".json"); }

RunConfig config(const std::string& name, const std::string& sub) {
  RunConfig cfg = load_run_config(kData + "/configs/" + name + ".json");
  cfg.out_dir = g_out + "/" + sub;
  return cfg;
}

const std::vector<std::string> kShipped{"free_n2", "free_n3_m2", "constantC_n3", "perturbed_n3", "damped_n2", "nonnormal_n3"};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. closed forms for the free and constant-coefficient operators
Outcome exact_eigenvalues() {
  const int K = 32;
  const auto grid = uniform_t_grid(64);
  Outcome o{true, ""};
  for (const std::string name : {"free_n2", "free_n3_m2", "constantC_n3"}) {
    const auto t0 = std::chrono::steady_clock::now();
    const OperatorSpec spec = shipped(name);
    const MeanMatrixData mean = compute_mean_matrix(spec, true);
    const int kmax = K / 2 - spec.max_bandwidth();
    const auto systems = solve_many(spec, grid, K);
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const CVec& lam = systems[i].lambda;
      for (int k = -kmax; k <= kmax; ++k)
        for (int j = 0; j < spec.m; ++j) {
          const Complex ref = leading_term(spec.n, k, Complex(grid[i], 0.0), mean.mu[j]);
          double best = std::numeric_limits<double>::infinity();
          for (Eigen::Index p = 0; p < lam.size(); ++p) best = std::min(best, std::abs(lam[p] - ref));
          worst = std::max(worst, best / std::max(1.0, std::abs(ref)));
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = worst < 1e-10 && secs < 60.0;
    o.pass = o.pass && ok;
    o.detail += name + " rel " + fmt("%.2e", worst) + " in " + fmt("%.1f", secs) + "s; ";
  }
  o.detail += "tol 1e-10, < 60 s";
  return o;
}

// 2. Galerkin eigenvalues against the monodromy determinant
Outcome oracle_cross_validation() {
  const RunConfig cfg = config("perturbed_oracle", "oracle");
  const json summary = run_oracle_check(cfg, false);
  std::ifstream in(std::filesystem::path(cfg.out_dir) / "oracle_check.json");
  const json doc = json::parse(in);
  // failures by |k|, and the multiplier gap of the failing rows
  std::map<int, std::pair<int, int>> by_k;
  double worst_gap = 0.0;
  for (const auto& row : doc["rows"]) {
    const int k = row["k"].is_null() ? -1 : std::abs(row["k"].get<int>());  // -1: low branches
    auto& [fails, total] = by_k[k];
    ++total;
    if (!row["pass"].get<bool>()) {
      ++fails;
      if (!row["multiplier_gap"].is_null()) worst_gap = std::max(worst_gap, row["multiplier_gap"].get<double>());
    }
  }
  std::string per_k;
  for (const auto& [k, ft] : by_k) per_k += (k < 0 ? std::string(" low") : " |k|=" + std::to_string(k)) + ":" + std::to_string(ft.first) + "/" + std::to_string(ft.second);
  Outcome o;
  o.pass = summary["pass"].get<bool>();
  o.detail = "fails " + std::to_string(summary["fail_count"].get<int>()) + "/" + std::to_string(summary["checked"].get<int>()) +
             ", max rel " + fmt("%.2e", summary["max_rel_delta"].is_null() ? INFINITY : summary["max_rel_delta"].get<double>()) +
             ", worst multiplier gap of failing rows " + fmt("%.1e", worst_gap) + ";" + per_k + "; tol 1e-6";
  return o;
}

// 3. residual exponents of the asymptotic laws
Outcome asymptotic_laws() {
  Outcome o{true, ""};
  for (const std::string name : {"perturbed_n3", "nonnormal_n3"}) {
    const OperatorSpec spec = shipped(name);
    const BandSet bs = track_bands(spec, 32, uniform_t_grid(64));
    const ResidualFit ev = verify_eigenvalue_asymptotics(bs, 6, 16);
    const MeanMatrixData mean = compute_mean_matrix(spec);
    const auto [psi, X] = verify_eigenfunction_asymptotics(bs, mean, 6, 16);
    auto within = [](const ResidualFit& f, double limit) { return f.exact || f.exponent <= limit; };
    const double ev_limit = spec.n - 3 + 0.35;
    const bool ok = within(ev, ev_limit) && within(psi, -0.65) && within(X, -0.65);
    o.pass = o.pass && ok;
    auto show = [](const ResidualFit& f) { return f.exact ? std::string("exact") : fmt("%.2f", f.exponent); };
    o.detail += name + " eigenvalue " + show(ev) + " (<= " + fmt("%.2f", ev_limit) + "), Psi " + show(psi) + ", X " +
                show(X) + " (<= -0.65); ";
  }
  return o;
}

// 4. biorthogonality and the rank-one projection norm
Outcome biorthogonality() {
  double bio = 0.0, norm_dev = 0.0;
  for (const std::string name : {"perturbed_n3", "nonnormal_n3"}) {
    const OperatorSpec spec = shipped(name);
    for (double t : {-2.3, 0.7, 2.9}) {
      const EigenSystem sys = solve_eigensystem(spec, Complex(t, 0.0), 32);
      CMat Xs(sys.right.rows(), sys.size());
      for (int q = 0; q < sys.size(); ++q) Xs.col(q) = sys.X(q);
      const CMat G = Xs.adjoint() * sys.right;
      bio = std::max(bio, (G - CMat::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff());
      for (int p = 0; p < 12; ++p) {
        const BlochEigenpair pair = sys.pair(p);
        const double exact = projection_norm(pair);
        const double emp = empirical_projection_norm(pair, 200, 42 + static_cast<std::uint64_t>(p));
        norm_dev = std::max(norm_dev, std::abs(emp - exact) / exact);
      }
    }
  }
  return {bio < 1e-8 && norm_dev < 0.02,
          "max |(Psi_p, X_q) - delta_pq| " + fmt("%.2e", bio) + " (tol 1e-8); empirical vs 1/|alpha| " +
              fmt("%.2e", norm_dev) + " (tol 0.02, 200 trials)"};
}

// 5. Gelfand transform identities
Outcome gelfand() {
  std::vector<double> xs;
  for (int i = 0; i <= 80; ++i) xs.push_back(-2.0 + 0.05 * i);
  double inv = 0.0, pars = 0.0;
  const std::vector<TestFunction> fs{TestFunction::bump(-1.0, 1.0, CVec::Ones(1)), TestFunction::random_smooth(-1.3, 0.8, 2, 7)};
  for (const auto& f : fs) {
    inv = std::max(inv, gelfand_inversion_error(f, xs, 128));
    const auto [lhs, rhs] = gelfand_parseval(f, 128);
    pars = std::max(pars, std::abs(lhs - rhs) / rhs);
  }
  double coef = 0.0;
  const OperatorSpec spec = shipped("perturbed_n3");
  for (double t : {-1.7, 0.4}) {
    const EigenSystem sys = solve_eigensystem(spec, Complex(t, 0.0), 32);
    for (int p = 0; p < 20; ++p) {
      const BlochEigenpair pair = sys.pair(p);
      coef = std::max(coef, std::abs(coefficient_a(fs[1], pair, CoefficientMode::cell) -
                                     coefficient_a(fs[1], pair, CoefficientMode::line)));
    }
  }
  return {inv < 1e-8 && pars < 1e-8 && coef < 1e-8,
          "inversion " + fmt("%.2e", inv) + ", Parseval " + fmt("%.2e", pars) + " (128 nodes), cell vs line " +
              fmt("%.2e", coef) + "; tol 1e-8"};
}

// 6. tail bound constant
Outcome tail_bound() {
  Outcome o{true, ""};
  for (const std::string name : {"perturbed_n3", "nonnormal_n3"}) {
    const BandSet bs = track_bands(shipped(name), 32, uniform_t_grid(64));
    TailBoundOptions to;
    to.trials = 100;
    const TailBoundReport tb = tail_bound_check(bs, to);
    bool finite = !tb.rows.empty();
    for (const auto& r : tb.rows) finite = finite && std::isfinite(r.c);
    const bool ok = finite && tb.max_variation < 0.1;
    o.pass = o.pass && ok;
    o.detail += name + " c(4) " + fmt("%.4g", tb.rows.empty() ? NAN : tb.rows[0].c) + ", c(8) " +
                fmt("%.4g", tb.rows.size() < 2 ? NAN : tb.rows[1].c) + ", variation " + fmt("%.3f", tb.max_variation) + "; ";
  }
  o.detail += "tol < 0.10";
  return o;
}

// 7. bounded projections far out, K against K + 8
Outcome projection_scan() {
  Outcome o{true, ""};
  int used = 0;
  for (const std::string& name : kShipped) {
    const OperatorSpec spec = shipped(name);
    const MeanMatrixData mean = compute_mean_matrix(spec, true);
    const ConditionReport cond = classify_conditions(spec, mean, reduce_p1(spec));
    if (!(cond.condition1 || cond.condition2) || !mean.simple) continue;
    const BandSet b32 = track_bands(spec, 32, uniform_t_grid(64));
    if (!b32.labelled) continue;
    ProjectionScanOptions po;
    po.trials = 100;
    const ProjectionScanReport r32 = bounded_projection_scan(b32, po);
    po.M_threshold = r32.M_threshold;
    po.M_max = r32.M_max;
    const ProjectionScanReport r40 = bounded_projection_scan(track_bands(spec, 40, uniform_t_grid(64)), po);
    const double change = std::abs(r40.sup - r32.sup) / r32.sup;
    const bool ok = r32.bounded && r40.bounded && std::isfinite(r32.sup) && change < 0.05;
    o.pass = o.pass && ok;
    ++used;
    o.detail += name + " sup " + fmt("%.6g", r32.sup) + " -> " + fmt("%.6g", r40.sup) + " (" + fmt("%.2e", change) + "); ";
  }
  if (used == 0) o.pass = false;
  o.detail += "tol < 0.05";
  return o;
}

struct Reconstruction {
  ExpansionResult res;
  double vs_oracle = 0.0;
};

Reconstruction reconstruct_from(const RunConfig& cfg) {
  const BandSet bs = track_bands(cfg.op, 32, uniform_t_grid(cfg.t_grid_size));
  const Region region = cfg.region ? *cfg.region : default_scan_region(bs);
  ScanOptions so;
  so.nx = cfg.scan_nx;
  so.ny = cfg.scan_ny;
  const DegeneracyCatalog cat = resultant_scan(cfg.op, region, so);
  const TestFunction f = TestFunction::from_json(cfg.test_function, cfg.op.m);
  ClassifyOptions co;
  co.K = 32;
  const SingularityReport rep = classify_singularities(cfg.op, cat, bs, probe_family(f, cfg.probes_randomized, cfg.seed), co);
  ExpansionParams params;
  params.K = cfg.K;
  params.K_branch = cfg.K_branch;
  params.extra_cuts = cfg.extra_cuts;
  params.windows = cfg.windows;
  params.huddle.delta0 = cfg.delta0;
  params.huddle.levels = cfg.levels;
  Reconstruction out{reconstruct(cfg.op, f, params, cat.A, &rep)};
  const CMat oracle = bandlimited_fourier(f, kTwoPi * (cfg.K_branch + 0.5), out.res.x);
  out.vs_oracle = l2_distance(out.res.reconstruction, oracle, out.res.xw);
  return out;
}

// 8. reconstruction of a bump
Outcome reconstruction() {
  Outcome o{true, ""};
  const double quad_tol = 1e-10;
  double s_empty = 0.0;

  RunConfig free_cfg = config("free_n2_expand", "free");
  const Reconstruction fr = reconstruct_from(free_cfg);
  const double free_err = fr.res.errors[0].l2_error;
  o.pass = o.pass && free_err < 1e-6 && fr.vs_oracle < 1e-6;
  o.detail += "free vs f " + fmt("%.2e", free_err) + ", vs oracle " + fmt("%.2e", fr.vs_oracle) + " (tol 1e-6); ";
  s_empty = std::max({s_empty, fr.res.termwise_vs_huddled, fr.res.termwise_vs_summed});

  RunConfig cc_cfg = config("free_n2_expand", "constantC");
  cc_cfg.op = shipped("constantC_n3");
  cc_cfg.test_function = json{{"kind", "bump"}, {"support", {-1.0, 1.0}}};
  cc_cfg.region = Region{-30.0, 30.0, -300.0, 300.0};
  cc_cfg.scan_nx = 8;
  cc_cfg.scan_ny = 40;
  const Reconstruction cr = reconstruct_from(cc_cfg);
  const double cc_err = cr.res.errors[0].l2_error;
  o.pass = o.pass && cc_err < 1e-5 && cr.vs_oracle < 1e-5;
  o.detail += "constantC vs f " + fmt("%.2e", cc_err) + ", vs oracle " + fmt("%.2e", cr.vs_oracle) + " (tol 1e-5); ";
  s_empty = std::max({s_empty, cr.res.termwise_vs_huddled, cr.res.termwise_vs_summed});

  const Reconstruction pr = reconstruct_from(config("perturbed_expand", "perturbed"));
  std::vector<std::pair<int, double>> seq;
  for (const auto& [kb, errs] : pr.res.cut_errors) seq.emplace_back(kb, errs[0].l2_error);
  seq.emplace_back(pr.res.K_branch, pr.res.errors[0].l2_error);
  std::sort(seq.begin(), seq.end());
  bool monotone = true;
  for (std::size_t i = 1; i < seq.size(); ++i) monotone = monotone && seq[i].second < seq[i - 1].second;
  o.pass = o.pass && monotone && seq.back().second < 1e-3;
  o.detail += "perturbed";
  for (const auto& [kb, e] : seq) o.detail += " K_branch " + std::to_string(kb) + ": " + fmt("%.2e", e);
  o.detail += std::string(monotone ? " (decreasing)" : " (NOT decreasing)") + ", tol 1e-3; ";
  s_empty = std::max({s_empty, pr.res.termwise_vs_huddled, pr.res.termwise_vs_summed});

  o.pass = o.pass && s_empty <= quad_tol;
  o.detail += "S empty paths differ by " + fmt("%.2e", s_empty) + " (quad_tol 1e-10)";
  return o;
}

CMat scalar(Complex v) {
  CMat out(1, 1);
  out(0, 0) = v;
  return out;
}

// 9. synthetic singularities
Outcome synthetic_classification() {
  auto classify = [](double beta) {
    BranchProbe probe;
    probe.abs_alpha = [beta](double t) { return std::pow(std::abs(t - 0.3), beta); };
    probe.g.push_back([beta](double t) { return std::pow(std::abs(t - 0.3), -beta); });
    return classify_point(probe, 0.3, ClassifyOptions{});
  };
  const PointClassification half = classify(0.5);
  const PointClassification ess = classify(1.2);
  bool ok = std::abs(half.alpha_fit.beta - 0.5) <= 0.02 && half.cls == SingularityClass::spectral_singularity &&
            std::abs(ess.alpha_fit.beta - 1.2) <= 0.02 && std::abs(ess.beta_g - 1.2) <= 0.02 &&
            ess.cls == SingularityClass::essential_spectral_singularity;

  const double t0 = 0.4, c = 0.7;
  auto term = [&](double sign) {
    return Integrand([=](double t) { return scalar(sign * c * std::pow(std::abs(t - t0), -1.2) + (sign > 0 ? std::cos(t) : 1.0)); });
  };
  int divergent = 0;
  for (double sign : {1.0, -1.0}) {
    try {
      integrate_branch(term(sign), 1, 1, {t0});
    } catch (const NumericalError&) {
      ++divergent;
    }
  }
  const Integrand sum = [&](double t) { return CMat(term(1.0)(t) + term(-1.0)(t)); };
  const HuddleResult h = huddled_integral(sum, 1, 1, {t0});
  const double limit_err = std::abs(h.limit(0, 0) - kTwoPi);
  ok = ok && divergent == 2 && h.converged && h.tail < 1e-6 && limit_err < 1e-8;
  return {ok, "beta 0.5 -> " + fmt("%.4f", half.alpha_fit.beta) + " " + to_string(half.cls) + ", beta 1.2 -> " +
                  fmt("%.4f", ess.alpha_fit.beta) + " " + to_string(ess.cls) + " (tol 0.02); cancellation pair: " +
                  std::to_string(divergent) + "/2 branch integrals diverge, huddle tail " + fmt("%.2e", h.tail) +
                  " (tol 1e-6), limit error " + fmt("%.2e", limit_err)};
}

bool sets_consistent(const SingularityReport& rep) {
  std::set<int> S(rep.S.begin(), rep.S.end()), unionSi;
  for (const auto& [i, Si] : rep.S_i) {
    std::set<int> bundles;
    std::size_t count = 0;
    if (rep.S_ij.count(i) == 0) return false;
    for (const auto& [j, bundle] : rep.S_ij.at(i)) {
      bundles.insert(bundle.begin(), bundle.end());
      count += bundle.size();
    }
    if (count != bundles.size() || bundles != std::set<int>(Si.begin(), Si.end())) return false;
    unionSi.insert(Si.begin(), Si.end());
  }
  return S == unionSi;
}

// 10. set machinery on every shipped example and on a synthetic ESS report
Outcome set_machinery() {
  Outcome o{true, ""};
  for (const std::string& name : kShipped) {
    const OperatorSpec spec = shipped(name);
    const BandSet bs = track_bands(spec, 32, uniform_t_grid(64), TrackOptions{}, true);
    DegeneracyCatalog cat;
    try {
      cat = resultant_scan(spec, default_scan_region(bs));
    } catch (const NumericalError& e) {
      if (e.kind() != "ResultantVanishes") throw;
      o.detail += name + " n/a (every eigenvalue multiple); ";
      continue;
    }
    std::size_t maxA = 0;
    for (const auto& e : cat.entries) maxA = std::max(maxA, e.A.size());
    const SingularityReport rep = classify_singularities(
        spec, cat, bs, probe_family(TestFunction::bump(-1.0, 1.0, CVec::Ones(spec.m)), 2, 42));
    const bool ok = maxA <= static_cast<std::size_t>(spec.n * spec.m) && sets_consistent(rep);
    o.pass = o.pass && ok;
    o.detail += name + " |A| " + std::to_string(maxA) + "/" + std::to_string(spec.n * spec.m) + " |S| " +
                std::to_string(rep.S.size()) + (ok ? "" : " INCONSISTENT") + "; ";
  }

  SingularityReport rep;
  auto entry = [](double t0, std::vector<int> branches, SingularityClass c) {
    PointClassification pc;
    pc.t0 = t0;
    pc.branches = std::move(branches);
    pc.cls = c;
    pc.integrable = c != SingularityClass::essential_spectral_singularity;
    return pc;
  };
  MultipleEigenvalueReport a{Complex(1.0, 0.0), {0.5, -0.5}, {}};
  a.entries.push_back(entry(0.5, {3, 4}, SingularityClass::essential_spectral_singularity));
  a.entries.push_back(entry(-0.5, {3, 4}, SingularityClass::spectral_singularity));
  MultipleEigenvalueReport b{Complex(2.0, 0.0), {0.5, 1.0}, {}};
  b.entries.push_back(entry(0.5, {4, 7}, SingularityClass::essential_spectral_singularity));
  b.entries.push_back(entry(1.0, {8, 9}, SingularityClass::essential_spectral_singularity));
  rep.multiple_eigenvalues = {a, b};
  assemble_sets(rep);
  const bool synth = sets_consistent(rep) && rep.S.size() == 5 && rep.E.size() == 2;
  o.pass = o.pass && synth;
  o.detail += std::string("synthetic ESS report ") + (synth ? "consistent" : "INCONSISTENT");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only, expect_fail;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail; exit 0 when exactly these fail");
  app.add_option("--out", g_out, "Directory for the reports written along the way");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"exact-case eigenvalues", exact_eigenvalues},
      {"oracle cross-validation", oracle_cross_validation},
      {"asymptotic laws", asymptotic_laws},
      {"biorthogonality and projection norm", biorthogonality},
      {"Gelfand identities", gelfand},
      {"tail bound constant", tail_bound},
      {"projection scan", projection_scan},
      {"reconstruction", reconstruction},
      {"singularity classification", synthetic_classification},
      {"set machinery", set_machinery}};

  std::set<int> failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) failed.insert(id);
    std::printf("criterion %2d %s  %s: %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  if (!app.count("--expect-fail")) return failed.empty() ? 0 : 1;
  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  if (failed == expected) {
    std::printf("failing set matches the expected set\n");
    return 0;
  }
  std::printf("failing set differs from the expected set\n");
  return 1;
}
