#include "blochspec/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>

#include "blochspec/band_tracker.hpp"
#include "blochspec/expansion.hpp"
#include "blochspec/floquet.hpp"
#include "blochspec/parallel.hpp"
#include "blochspec/sample_operators.hpp"
#include "blochspec/singularity.hpp"
#include "blochspec/test_function.hpp"

namespace blochspec {

namespace {

using nlohmann::json;

// A numerical failure that carries report data for the error JSON.
class ReportedFailure : public NumericalError {
 public:
  ReportedFailure(std::string kind, const std::string& what, json detail)
      : NumericalError(std::move(kind), what), detail_(std::move(detail)) {}
  const json& detail() const { return detail_; }

 private:
  json detail_;
};

json cjson(Complex z) { return json::array({z.real(), z.imag()}); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::filesystem::path prepare_out(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw ValidationError("ConfigInvalid", "cannot create output directory '" + dir + "': " + ec.message(), "out");
  return p;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NumericalError("OutputError", "cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw NumericalError("OutputError", "write to '" + path.string() + "' failed");
}

void write_json(const std::filesystem::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double norm2(const CMat& M) { return Eigen::JacobiSVD<CMat>(M).singularValues()(0); }

BandSet bands_for(const RunConfig& cfg, bool force) {
  return track_bands(cfg.op, cfg.K, uniform_t_grid(cfg.t_grid_size), TrackOptions{}, force);
}

json fit_json(const ResidualFit& f) {
  json rows = json::array();
  for (const auto& r : f.rows) rows.push_back({{"k", r.k}, {"j", r.j}, {"residual", r.residual}});
  return {{"rows", rows},
          {"exponent", finite_or_null(f.exponent)},
          {"limit", f.limit},
          {"exact", f.exact},
          {"pass", f.pass}};
}

json catalog_json(const DegeneracyCatalog& cat) {
  json entries = json::array();
  for (const auto& e : cat.entries)
    entries.push_back({{"a", cjson(e.a)}, {"multiplicity", e.multiplicity}, {"A", e.A}, {"residual", e.residual}});
  json dropped = json::array();
  for (const auto& z : cat.dropped) dropped.push_back(cjson(z));
  json diverged = json::array();
  for (const auto& z : cat.diverged) diverged.push_back(cjson(z));
  return {{"region", {cat.region.re_lo, cat.region.re_hi, cat.region.im_lo, cat.region.im_hi}},
          {"entries", entries},
          {"dropped", dropped},
          {"diverged", diverged},
          {"A", cat.A}};
}

struct SingularityRun {
  BandSet bands;
  DegeneracyCatalog catalog;
  SingularityReport report;
};

SingularityRun singularity_pipeline(const RunConfig& cfg, bool force) {
  SingularityRun run;
  run.bands = bands_for(cfg, force);
  const Region region = cfg.region ? *cfg.region : default_scan_region(run.bands);
  ScanOptions so;
  so.nx = cfg.scan_nx;
  so.ny = cfg.scan_ny;
  run.catalog = resultant_scan(cfg.op, region, so);
  const TestFunction f = TestFunction::from_json(cfg.test_function, cfg.op.m, "/test_function");
  ClassifyOptions co;
  co.bound_cap = cfg.tol.bound_cap;
  co.ess_margin = cfg.tol.ess_margin;
  co.K = cfg.K;
  run.report = classify_singularities(cfg.op, run.catalog, run.bands, probe_family(f, cfg.probes_randomized, cfg.seed), co);
  return run;
}

}  // namespace

json run_bands(const RunConfig& cfg, bool force) {
  const auto dir = prepare_out(cfg.out_dir);
  const MeanMatrixData mean = compute_mean_matrix(cfg.op, force, cfg.tol.deg_tol);
  const ReducedSpec red = reduce_p1(cfg.op);
  const ConditionReport cond = classify_conditions(cfg.op, mean, red);
  const BandSet bs = bands_for(cfg, force);

  std::ostringstream csv;
  write_band_csv(bs, csv);
  write_file(dir / "bands.csv", csv.str());

  json mu = json::array();
  for (Eigen::Index i = 0; i < bs.mu_shifted.size(); ++i) mu.push_back(cjson(bs.mu_shifted[i]));
  json suspects = json::array();
  for (const auto& s : bs.suspects)
    suspects.push_back({{"t_lo", s.t_lo}, {"t_hi", s.t_hi}, {"branches", s.branches}, {"unresolved", s.unresolved}});
  json branches = json::array();
  int certified = 0;
  for (const auto& b : bs.bands) {
    json row = {{"p", b.p}, {"certified", b.certified}, {"max_jump", b.max_jump}, {"tail", b.tail}};
    row["k"] = b.k ? json(*b.k) : json(nullptr);
    row["j"] = b.j ? json(*b.j) : json(nullptr);
    branches.push_back(row);
    certified += b.certified ? 1 : 0;
  }
  json doc = {{"n", bs.n},
              {"m", bs.m},
              {"K", bs.K},
              {"K_lab", bs.K_lab},
              {"N0", bs.N0},
              {"N1", bs.N1},
              {"labelled", bs.labelled},
              {"r", cjson(bs.r)},
              {"mu", mu},
              {"conditions",
               {{"condition1", cond.condition1},
                {"condition2", cond.condition2},
                {"asymptotically_spectral_expected", cond.asymptotically_spectral_expected},
                {"simple_mean", cond.simple_mean},
                {"note", cond.note}}},
              {"t_grid_size", bs.t_grid.size()},
              {"suspects", suspects},
              {"branches", branches}};
  write_json(dir / "bands.json", doc);
  return {{"command", "bands"},
          {"outputs", {"bands.csv", "bands.json"}},
          {"branches", bs.bands.size()},
          {"certified", certified},
          {"suspects", bs.suspects.size()},
          {"labelled", bs.labelled}};
}

json run_oracle_check(const RunConfig& cfg, bool force) {
  const auto dir = prepare_out(cfg.out_dir);
  const BandSet bs = bands_for(cfg, force);
  const int p_max = (2 * cfg.oracle_k_max + 1) * bs.m;
  const int p_root = 3 * bs.m;  // root matching for the lowest branches only
  const std::size_t N = bs.t_grid.size();

  struct Item {
    std::size_t i;
    const BandFunction* band;
  };
  std::vector<Item> items;
  for (int q = 0; q < cfg.oracle_t_points; ++q) {
    const std::size_t i = static_cast<std::size_t>(q) * N / static_cast<std::size_t>(cfg.oracle_t_points);
    for (const auto& b : bs.bands)
      if (b.p <= p_max) items.push_back({i, &b});
  }
  std::vector<json> rows(items.size());
  std::vector<double> rel(items.size(), 0.0);
  std::vector<char> ok(items.size(), 0);
  parallel_for(items.size(), [&](std::size_t r) {
    const auto& [i, b] = items[r];
    const double t = bs.t_grid[i];
    const Complex lambda = b->lambda[i];
    const MonodromyResult mono = monodromy(cfg.op, lambda);
    const double nM = norm2(mono.M);
    const double d = std::abs(char_det(mono, t));
    rel[r] = d / std::max(1.0, nM);
    ok[r] = rel[r] < cfg.tol.cross_tol;
    json row = {{"t", t},
                {"p", b->p},
                {"lambda", cjson(lambda)},
                {"abs_delta", finite_or_null(d)},
                {"norm_M", finite_or_null(nM)},
                {"rel_delta", finite_or_null(rel[r])},
                {"multiplier_gap", finite_or_null(multiplier_gap(mono, t))},
                {"pass", ok[r] != 0}};
    row["k"] = b->k ? json(*b->k) : json(nullptr);
    row["j"] = b->j ? json(*b->j) : json(nullptr);
    if (b->p <= p_root) {
      const auto roots = char_roots(cfg.op, t, {lambda});
      if (!roots.empty()) {
        double best = std::numeric_limits<double>::infinity();
        for (const Complex& z : roots) best = std::min(best, std::abs(z - lambda) / std::max(1.0, std::abs(lambda)));
        row["root_distance"] = best;
      } else {
        row["root_distance"] = nullptr;
      }
    }
    rows[r] = std::move(row);
  });

  double worst = 0.0;
  int fails = 0;
  for (std::size_t r = 0; r < items.size(); ++r) {
    worst = std::max(worst, std::isfinite(rel[r]) ? rel[r] : std::numeric_limits<double>::infinity());
    fails += ok[r] ? 0 : 1;
  }
  json doc = {{"threshold", cfg.tol.cross_tol},
              {"k_max", cfg.oracle_k_max},
              {"t_points", cfg.oracle_t_points},
              {"rows", rows},
              {"max_rel_delta", finite_or_null(worst)},
              {"fail_count", fails},
              {"pass", fails == 0}};
  write_json(dir / "oracle_check.json", doc);
  return {{"command", "oracle-check"},
          {"outputs", {"oracle_check.json"}},
          {"checked", items.size()},
          {"fail_count", fails},
          {"max_rel_delta", finite_or_null(worst)},
          {"pass", fails == 0}};
}

json run_singularities(const RunConfig& cfg, bool force) {
  const auto dir = prepare_out(cfg.out_dir);
  const SingularityRun run = singularity_pipeline(cfg, force);
  write_json(dir / "singularities.json", singularity_report_to_json(run.report));
  write_json(dir / "degeneracies.json", catalog_json(run.catalog));

  json scan;
  if (run.bands.labelled) {
    ProjectionScanOptions po;
    po.trials = cfg.trials;
    po.seed = cfg.seed;
    po.bound_cap = cfg.tol.bound_cap;
    const ProjectionScanReport r = bounded_projection_scan(run.bands, po);
    scan = {{"sup", finite_or_null(r.sup)},     {"t_at_sup", r.t_at_sup}, {"M_threshold", r.M_threshold},
            {"M_max", r.M_max},                 {"trials", r.trials},     {"evaluations", r.evaluations},
            {"bounded", r.bounded},             {"seed", cfg.seed},       {"K", cfg.K}};
  } else {
    scan = {{"skipped", "UnlabelledBranch"}, {"seed", cfg.seed}, {"K", cfg.K}};
  }
  write_json(dir / "projection_scan.json", scan);

  int entries = 0;
  for (const auto& me : run.report.multiple_eigenvalues) entries += static_cast<int>(me.entries.size());
  return {{"command", "singularities"},
          {"outputs", {"singularities.json", "degeneracies.json", "projection_scan.json"}},
          {"multiple_eigenvalues", run.report.multiple_eigenvalues.size()},
          {"classified_points", entries},
          {"E", run.report.E},
          {"S", run.report.S}};
}

json run_expand(const RunConfig& cfg, bool force) {
  const auto dir = prepare_out(cfg.out_dir);
  const TestFunction f = TestFunction::from_json(cfg.test_function, cfg.op.m, "/test_function");
  const SingularityRun run = singularity_pipeline(cfg, force);
  write_json(dir / "singularities.json", singularity_report_to_json(run.report));

  ExpansionParams params;
  params.K = cfg.K;
  params.K_branch = cfg.K_branch;
  params.extra_cuts = cfg.extra_cuts;
  params.windows = cfg.windows;
  params.huddle.delta0 = cfg.delta0;
  params.huddle.levels = cfg.levels;
  params.huddle.tail_tol = cfg.tol.tail_tol;
  params.force = force;
  const ExpansionResult res = reconstruct(cfg.op, f, params, run.catalog.A, &run.report);

  json doc = expansion_report_to_json(res);
  doc["quad_tol"] = cfg.tol.quad_tol;
  doc["quad_tol_met"] = res.quad_error <= cfg.tol.quad_tol;
  doc["truncation_mass"] = f.truncation_mass();
  write_json(dir / "expansion.json", doc);

  std::string csv = "x,component,re_value,im_value\n";
  for (std::size_t i = 0; i < res.x.size(); ++i)
    for (Eigen::Index c = 0; c < res.reconstruction.rows(); ++c) {
      const Complex v = res.reconstruction(c, static_cast<Eigen::Index>(i));
      csv += g17(res.x[i]) + "," + std::to_string(c + 1) + "," + g17(v.real()) + "," + g17(v.imag()) + "\n";
    }
  write_file(dir / "reconstruction.csv", csv);

  json outputs = {"singularities.json", "expansion.json", "reconstruction.csv"};
  if (run.bands.labelled) {
    TailBoundOptions to;
    to.trials = cfg.trials;
    to.seed = cfg.seed;
    to.s_values = cfg.tail_s;
    const TailBoundReport tb = tail_bound_check(run.bands, to);
    json rows = json::array();
    for (const auto& r : tb.rows) rows.push_back({{"s", r.s}, {"c", r.c}, {"c32", r.c32}, {"c33", r.c33}});
    write_json(dir / "tail_bound.json",
               {{"rows", rows}, {"max_variation", tb.max_variation}, {"stable", tb.stable}, {"seed", cfg.seed}});
    outputs.push_back("tail_bound.json");
  }

  if (!res.huddle_converged && !force) {
    json seq = json::array();
    if (res.huddle)
      for (const auto& I : res.huddle->sequence) seq.push_back(I.cwiseAbs().maxCoeff());
    throw ReportedFailure("HuddleDiverged",
                          "huddled sequence failed the Cauchy test at tail_tol = " + g17(cfg.tol.tail_tol),
                          {{"delta_sequence", res.delta_sequence},
                           {"sequence_max_abs", seq},
                           {"tail", res.huddle ? finite_or_null(res.huddle->tail) : json(nullptr)}});
  }

  json errors = json::array();
  for (const auto& w : res.errors) errors.push_back({{"a", w.a}, {"b", w.b}, {"l2_error", w.l2_error}});
  return {{"command", "expand"}, {"outputs", outputs}, {"windows", errors}, {"huddle_converged", res.huddle_converged}};
}

json run_verify_asymptotics(const RunConfig& cfg, bool force) {
  const auto dir = prepare_out(cfg.out_dir);
  const BandSet bs = bands_for(cfg, force);
  const ResidualFit ev = verify_eigenvalue_asymptotics(bs, cfg.asym_k_lo, cfg.asym_k_hi);
  json doc = {{"k_lo", cfg.asym_k_lo}, {"k_hi", cfg.asym_k_hi}, {"eigenvalue", fit_json(ev)}};
  // eigenfunction laws are stated for r = 0; otherwise check the p1-reduced operator
  const ReducedSpec red = reduce_p1(cfg.op);
  const bool reduced = std::abs(red.r) > 0.0 || !cfg.op.p1.coeffs().empty();
  const OperatorSpec& target = reduced ? red.reduced : cfg.op;
  const BandSet bs_f = reduced ? track_bands(target, cfg.K, uniform_t_grid(cfg.t_grid_size), TrackOptions{}, force) : bs;
  const MeanMatrixData mean = compute_mean_matrix(target, force, cfg.tol.deg_tol);
  const auto [psi, X] = verify_eigenfunction_asymptotics(bs_f, mean, cfg.asym_k_lo, cfg.asym_k_hi);
  doc["psi"] = fit_json(psi);
  doc["X"] = fit_json(X);
  doc["eigenfunctions_on_reduced_operator"] = reduced;
  write_json(dir / "asymptotics.json", doc);
  return {{"command", "verify-asymptotics"},
          {"outputs", {"asymptotics.json"}},
          {"eigenvalue_exponent", finite_or_null(ev.exponent)},
          {"psi_exponent", finite_or_null(psi.exponent)},
          {"X_exponent", finite_or_null(X.exponent)},
          {"pass", ev.pass && psi.pass && X.pass}};
}

json run_selfcheck(const std::string& out_dir, std::uint64_t seed) {
  const auto dir = prepare_out(out_dir);
  json checks = json::array();
  bool all = true;
  auto record = [&](const std::string& name, double value, double tol) {
    const bool pass = std::isfinite(value) && value <= tol;
    all = all && pass;
    checks.push_back({{"name", name}, {"value", finite_or_null(value)}, {"tol", tol}, {"pass", pass}});
  };

  const OperatorSpec free2 = free_operator(2, 1);
  const OperatorSpec free3 = free_operator(3, 2);

  // Galerkin eigenvalues against the closed form (i(2 pi k + t))^n
  for (const OperatorSpec* spec : {&free2, &free3}) {
    double worst = 0.0;
    for (double t : {-3.0, -1.0, 0.25, 2.5}) {
      const EigenSystem sys = solve_eigensystem(*spec, Complex(t, 0.0), 8);
      for (int p = 0; p < sys.size(); ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (int k = -8; k <= 8; ++k) {
          const Complex ref = leading_term(spec->n, k, Complex(t, 0.0), 0.0);
          best = std::min(best, std::abs(sys.lambda[p] - ref) / std::max(1.0, std::abs(ref)));
        }
        worst = std::max(worst, best);
      }
    }
    record("free n=" + std::to_string(spec->n) + " eigenvalues match (i(2 pi k + t))^n", worst, 1e-10);
  }

  {
    const EigenSystem sys = solve_eigensystem(free3, Complex(0.7, 0.0), 6);
    double bio = 0.0, alpha = 0.0;
    for (int p = 0; p < sys.size(); ++p) {
      alpha = std::max(alpha, std::abs(1.0 - std::abs(sys.alpha[p])));
      for (int q = 0; q < sys.size(); ++q)
        bio = std::max(bio, std::abs(sys.X(q).dot(sys.right.col(p)) - (p == q ? 1.0 : 0.0)));
    }
    record("free biorthogonality (Psi_p, X_q) = delta_pq", bio, 1e-8);
    record("free |alpha| = 1", alpha, 1e-10);
  }

  {
    const double w = 2.3;
    const MonodromyResult mono = monodromy(free2, Complex(-w * w, 0.0));
    CMat ref(2, 2);
    ref << std::cos(w), std::sin(w) / w, -w * std::sin(w), std::cos(w);
    record("free n=2 monodromy closed form", (mono.M - ref).cwiseAbs().maxCoeff(), 1e-8);
    const CharPoly cp = char_poly_coeffs(mono);
    record("free n=2 char poly (1, -2 cos w, 1)",
           std::max({std::abs(cp.coeffs[0] - 1.0), std::abs(cp.coeffs[1] + 2.0 * std::cos(w)), std::abs(cp.coeffs[2] - 1.0)}),
           1e-8);
    const MonodromyResult zero = monodromy(free_operator(3, 1), Complex(0.0, 0.0));
    CMat pascal = CMat::Zero(3, 3);
    pascal << 1.0, 1.0, 0.5, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0;
    record("free n=3 monodromy at lambda = 0 is 1/(j-i)!", (zero.M - pascal).cwiseAbs().maxCoeff(), 1e-8);
    record("char_det(-pi^2, pi) = 0", std::abs(char_det(free2, Complex(-kPi * kPi, 0.0), kPi)), 1e-8);
    record("char_det(-pi^2, 0) = 4", std::abs(char_det(free2, Complex(-kPi * kPi, 0.0), 0.0) - 4.0), 1e-8);
  }

  {
    double worst = 0.0;
    for (int m : {1, 2, 3})
      for (int k = -9; k <= 9; ++k)
        for (int j = 1; j <= m && k != 0; ++j) {
          const auto [k2, j2] = label_kj(label_p(k, j, m), m);
          worst = std::max(worst, static_cast<double>(std::abs(k2 - k) + std::abs(j2 - j)));
        }
    record("branch label round trip", worst, 0.0);
  }

  const TestFunction bump = TestFunction::bump(-1.0, 1.0, CVec::Ones(1));
  {
    std::vector<double> xs;
    for (int i = 0; i <= 40; ++i) xs.push_back(-2.0 + 0.1 * i);
    record("Gelfand inversion", gelfand_inversion_error(bump, xs, 128), 1e-8);
    const auto [lhs, rhs] = gelfand_parseval(bump, 128);
    record("Gelfand Parseval", std::abs(lhs - rhs) / rhs, 1e-8);
    double worst = 0.0;
    for (int k : {-2, 0, 3}) {
      const auto pair = reference_eigenpair(free2, k, 0, Complex(0.4, 0.0), Reference::free);
      worst = std::max(worst, std::abs(coefficient_a(bump, pair) - bump.fourier(kTwoPi * k + 0.4)[0]));
    }
    record("free coefficient a_k(t) = hat f(2 pi k + t)", worst, 1e-12);
  }

  {
    const HuddleResult h = huddled_integral(Integrand{}, 1, 4, {});
    record("empty S huddles to zero", h.limit.cwiseAbs().maxCoeff(), 0.0);
  }

  {
    ExpansionParams params;
    params.K = 16;
    params.K_branch = 8;
    const ExpansionResult res = reconstruct(free2, bump, params, {0.0, kPi});
    const CMat oracle = bandlimited_fourier(bump, kTwoPi * (params.K_branch + 0.5), res.x);
    record("free reconstruction equals band-limited Fourier inversion", l2_distance(res.reconstruction, oracle, res.xw),
           1e-10);
    const TestFunction zero = TestFunction::bump(-1.0, 1.0, CVec::Zero(1));
    record("f = 0 reconstructs to 0", reconstruct(free2, zero, params, {0.0, kPi}).reconstruction.cwiseAbs().maxCoeff(),
           0.0);
  }

  {
    ScanOptions so;
    so.nx = 16;
    so.ny = 12;
    const DegeneracyCatalog cat = resultant_scan(free2, Region{-60.0, 10.0, -30.0, 30.0}, so);
    double worst = cat.entries.size() == 2 ? 0.0 : std::numeric_limits<double>::infinity();
    for (const auto& e : cat.entries) {
      const int j = static_cast<int>(std::lround(std::sqrt(std::max(0.0, -e.a.real())) / kPi));
      const double t_expect = (j % 2 == 0) ? 0.0 : kPi;
      worst = std::max(worst, std::abs(e.a + Complex(kPi * kPi * j * j, 0.0)));
      if (e.A.size() != 1 || std::abs(std::abs(e.A[0]) - t_expect) > 1e-6 || e.multiplicity != 2)
        worst = std::numeric_limits<double>::infinity();
    }
    record("free n=2 double eigenvalues -(pi j)^2 with A = {0} or {pi}", worst, 1e-6);
  }

  json doc = {{"checks", checks}, {"pass", all}, {"seed", seed}};
  write_json(dir / "selfcheck.json", doc);
  if (!all) throw ReportedFailure("SelfcheckFailed", "one or more self-check invariants failed", doc);
  return {{"command", "selfcheck"}, {"outputs", {"selfcheck.json"}}, {"checks", checks.size()}, {"pass", all}};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto report = [&](const std::string& kind, const std::string& message, const std::string& path, int code,
                    const json& detail = nullptr) {
    json e = {{"error", kind}, {"message", message}, {"path", path}, {"exit_code", code}};
    if (!detail.is_null()) e["detail"] = detail;
    err << e.dump() << "\n";
    return code;
  };

  CLI::App app{"Bloch spectral analysis of periodic differential operators"};
  app.require_subcommand(1);
  CommandOptions opts;
  std::string command;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"bands", "Track eigenvalue branches over the quasimomentum grid"},
      {"oracle-check", "Cross-check Galerkin eigenvalues against the monodromy determinant"},
      {"singularities", "Locate multiple eigenvalues and classify spectral singularities"},
      {"expand", "Reconstruct a test function from its spectral expansion"},
      {"verify-asymptotics", "Fit residual exponents of the eigenvalue and eigenfunction asymptotics"},
      {"selfcheck", "Run built-in invariants on the free operator"}};
  std::string config, outdir;
  std::uint64_t seed = 42;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "Run configuration JSON");
    sub->add_option("--out", outdir, "Output directory");
    sub->add_option("--seed", seed, "Seed for randomized scans (default 42)");
    sub->add_flag("--force", opts.force, "Continue past a degenerate mean matrix");
    sub->callback([&command, n = name] { command = n; });
  }

  std::vector<const char*> argv{"blochspec"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    return report("ConfigInvalid", e.what(), "argv", 1);
  }
  CLI::App* active = app.get_subcommands().front();
  if (active->count("--config")) opts.config = config;
  if (active->count("--out")) opts.out = outdir;
  if (active->count("--seed")) opts.seed = seed;

  try {
    json summary;
    if (command == "selfcheck") {
      summary = run_selfcheck(opts.out.value_or("."), opts.seed.value_or(42));
    } else {
      if (!opts.config) return report("ConfigInvalid", "--config is required for " + command, "--config", 1);
      RunConfig cfg = load_run_config(*opts.config);
      if (opts.out) cfg.out_dir = *opts.out;
      if (opts.seed) cfg.seed = *opts.seed;
      if (command == "bands") summary = run_bands(cfg, opts.force);
      else if (command == "oracle-check") summary = run_oracle_check(cfg, opts.force);
      else if (command == "singularities") summary = run_singularities(cfg, opts.force);
      else if (command == "expand") summary = run_expand(cfg, opts.force);
      else summary = run_verify_asymptotics(cfg, opts.force);
    }
    out << summary.dump() << "\n";
    return 0;
  } catch (const ValidationError& e) {
    return report(e.kind(), e.what(), e.path(), 1);
  } catch (const ReportedFailure& e) {
    return report(e.kind(), e.what(), "", 2, e.detail());
  } catch (const NumericalError& e) {
    return report(e.kind(), e.what(), "", 2);
  } catch (const std::exception& e) {
    return report("InternalError", e.what(), "", 2);
  }
}

}  // namespace blochspec
