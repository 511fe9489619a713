#include "blochspec/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "blochspec/test_function.hpp"

namespace blochspec {

namespace {

using nlohmann::json;

[[noreturn]] void invalid(const std::string& path, const std::string& msg) {
  throw ValidationError("ConfigInvalid", msg, path);
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
  if (!obj.is_object()) invalid(path, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) invalid(path + "/" + it.key(), "unknown field '" + it.key() + "'");
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) invalid(path, "expected a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) invalid(path, "expected an integer");
  return j.get<int>();
}

std::vector<int> int_list(const json& j, const std::string& path) {
  if (!j.is_array()) invalid(path, "expected an array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(integer(j[i], path + "/" + std::to_string(i)));
  return out;
}

}  // namespace

RunConfig parse_run_config(const json& doc, const std::string& base_dir) {
  reject_unknown(doc,
                 {"operator", "K", "t_grid_size", "K_branch", "extra_cuts", "delta0", "levels", "tolerances",
                  "test_function", "windows", "seed", "scan", "trials", "tail_s", "oracle", "asymptotics", "out"},
                 "");
  RunConfig cfg;
  if (!doc.contains("operator")) invalid("/operator", "missing operator (a path or an inline object)");
  const json& op = doc["operator"];
  if (op.is_string()) {
    std::filesystem::path p(op.get<std::string>());
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    cfg.operator_source = op.get<std::string>();
    try {
      cfg.op = load_operator(p.string());
    } catch (const ValidationError& e) {
      throw ValidationError(e.kind(), e.what(), "/operator" + (e.path() == p.string() ? std::string() : e.path()));
    }
  } else if (op.is_object()) {
    cfg.operator_source = "inline";
    try {
      cfg.op = operator_from_json(op);
    } catch (const ValidationError& e) {
      throw ValidationError(e.kind(), e.what(), "/operator" + e.path());
    }
  } else {
    invalid("/operator", "expected a path or an object");
  }

  if (doc.contains("K")) cfg.K = integer(doc["K"], "/K");
  if (doc.contains("t_grid_size")) cfg.t_grid_size = integer(doc["t_grid_size"], "/t_grid_size");
  if (doc.contains("K_branch")) cfg.K_branch = integer(doc["K_branch"], "/K_branch");
  if (doc.contains("extra_cuts")) cfg.extra_cuts = int_list(doc["extra_cuts"], "/extra_cuts");
  if (doc.contains("delta0")) cfg.delta0 = number(doc["delta0"], "/delta0");
  if (doc.contains("levels")) cfg.levels = integer(doc["levels"], "/levels");
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned()) invalid("/seed", "expected a non-negative integer");
    cfg.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("trials")) cfg.trials = integer(doc["trials"], "/trials");
  if (doc.contains("tail_s")) cfg.tail_s = int_list(doc["tail_s"], "/tail_s");
  if (doc.contains("out")) {
    if (!doc["out"].is_string()) invalid("/out", "expected a directory path");
    cfg.out_dir = doc["out"].get<std::string>();
  }

  if (doc.contains("tolerances")) {
    const json& t = doc["tolerances"];
    reject_unknown(t, {"quad_tol", "cross_tol", "eig_tol", "deg_tol", "ess_margin", "bound_cap", "tail_tol"},
                   "/tolerances");
    auto read = [&](const char* key, double& slot) {
      if (t.contains(key)) slot = number(t[key], std::string("/tolerances/") + key);
    };
    read("quad_tol", cfg.tol.quad_tol);
    read("cross_tol", cfg.tol.cross_tol);
    read("eig_tol", cfg.tol.eig_tol);
    read("ess_margin", cfg.tol.ess_margin);
    read("bound_cap", cfg.tol.bound_cap);
    read("tail_tol", cfg.tol.tail_tol);
    if (t.contains("deg_tol")) cfg.tol.deg_tol = number(t["deg_tol"], "/tolerances/deg_tol");
  }

  if (doc.contains("test_function")) {
    cfg.test_function = doc["test_function"];
    // parse now so a bad descriptor fails before any computation
    TestFunction::from_json(cfg.test_function, cfg.op.m, "/test_function");
  }

  if (doc.contains("windows")) {
    const json& w = doc["windows"];
    if (!w.is_array() || w.empty()) invalid("/windows", "expected a non-empty array of [a, b]");
    cfg.windows.clear();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::string p = "/windows/" + std::to_string(i);
      if (!w[i].is_array() || w[i].size() != 2) invalid(p, "expected [a, b]");
      const double a = number(w[i][0], p + "/0");
      const double b = number(w[i][1], p + "/1");
      if (!(b > a)) invalid(p, "window must satisfy a < b");
      cfg.windows.emplace_back(a, b);
    }
  }

  if (doc.contains("scan")) {
    const json& s = doc["scan"];
    reject_unknown(s, {"region", "nx", "ny", "probes"}, "/scan");
    if (s.contains("region")) {
      const json& r = s["region"];
      if (!r.is_array() || r.size() != 4) invalid("/scan/region", "expected [re_lo, re_hi, im_lo, im_hi]");
      Region reg{number(r[0], "/scan/region/0"), number(r[1], "/scan/region/1"), number(r[2], "/scan/region/2"),
                 number(r[3], "/scan/region/3")};
      if (!(reg.re_hi > reg.re_lo) || !(reg.im_hi > reg.im_lo)) invalid("/scan/region", "region must be non-empty");
      cfg.region = reg;
    }
    if (s.contains("nx")) cfg.scan_nx = integer(s["nx"], "/scan/nx");
    if (s.contains("ny")) cfg.scan_ny = integer(s["ny"], "/scan/ny");
    if (s.contains("probes")) cfg.probes_randomized = integer(s["probes"], "/scan/probes");
  }
  if (doc.contains("oracle")) {
    const json& o = doc["oracle"];
    reject_unknown(o, {"t_points", "k_max"}, "/oracle");
    if (o.contains("t_points")) cfg.oracle_t_points = integer(o["t_points"], "/oracle/t_points");
    if (o.contains("k_max")) cfg.oracle_k_max = integer(o["k_max"], "/oracle/k_max");
  }
  if (doc.contains("asymptotics")) {
    const json& a = doc["asymptotics"];
    reject_unknown(a, {"k_lo", "k_hi"}, "/asymptotics");
    if (a.contains("k_lo")) cfg.asym_k_lo = integer(a["k_lo"], "/asymptotics/k_lo");
    if (a.contains("k_hi")) cfg.asym_k_hi = integer(a["k_hi"], "/asymptotics/k_hi");
  }
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("ConfigInvalid", "cannot open config file '" + path + "'", path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ValidationError("ConfigInvalid", std::string("config JSON parse error: ") + e.what(), path);
  }
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_run_config(doc, dir.empty() ? "." : dir.string());
}

void validate_run_config(const RunConfig& cfg) {
  auto positive = [](double v, const std::string& path) {
    if (!(v > 0.0) || !std::isfinite(v)) invalid(path, "must be positive");
  };
  positive(cfg.tol.quad_tol, "/tolerances/quad_tol");
  positive(cfg.tol.cross_tol, "/tolerances/cross_tol");
  positive(cfg.tol.eig_tol, "/tolerances/eig_tol");
  positive(cfg.tol.ess_margin, "/tolerances/ess_margin");
  positive(cfg.tol.bound_cap, "/tolerances/bound_cap");
  positive(cfg.tol.tail_tol, "/tolerances/tail_tol");
  if (cfg.tol.deg_tol) positive(*cfg.tol.deg_tol, "/tolerances/deg_tol");
  positive(cfg.delta0, "/delta0");

  if (cfg.K_branch < 1) invalid("/K_branch", "K_branch must be at least 1");
  if (cfg.K < 2 * cfg.K_branch)
    invalid("/K_branch", "K_branch = " + std::to_string(cfg.K_branch) + " exceeds K/2 = " + std::to_string(cfg.K / 2));
  for (std::size_t i = 0; i < cfg.extra_cuts.size(); ++i)
    if (cfg.extra_cuts[i] < 1 || cfg.extra_cuts[i] > cfg.K_branch)
      invalid("/extra_cuts/" + std::to_string(i), "cuts must lie in [1, K_branch]");
  if (cfg.t_grid_size < 64) invalid("/t_grid_size", "t_grid_size must be at least 64");
  if (cfg.levels < 3) invalid("/levels", "at least 3 huddle levels are needed");
  if (cfg.trials < 1) invalid("/trials", "trials must be positive");
  if (cfg.scan_nx < 2 || cfg.scan_ny < 2) invalid("/scan", "scan grid needs at least 2 x 2 cells");
  if (cfg.probes_randomized < 0) invalid("/scan/probes", "probe count must be non-negative");
  if (cfg.oracle_t_points < 1) invalid("/oracle/t_points", "t_points must be positive");
  if (cfg.oracle_k_max < 0 || cfg.oracle_k_max > cfg.K / 2) invalid("/oracle/k_max", "k_max must lie in [0, K/2]");
  if (cfg.asym_k_lo < 1 || cfg.asym_k_hi > cfg.K / 2 || cfg.asym_k_lo >= cfg.asym_k_hi)
    invalid("/asymptotics", "need 1 <= k_lo < k_hi <= K/2");
  for (std::size_t i = 0; i < cfg.tail_s.size(); ++i)
    if (cfg.tail_s[i] < 1) invalid("/tail_s/" + std::to_string(i), "s must be positive");
}

json run_config_to_json(const RunConfig& cfg) {
  json doc;
  doc["operator"] = cfg.operator_source == "inline" ? operator_to_json(cfg.op) : json(cfg.operator_source);
  doc["K"] = cfg.K;
  doc["t_grid_size"] = cfg.t_grid_size;
  doc["K_branch"] = cfg.K_branch;
  doc["extra_cuts"] = cfg.extra_cuts;
  doc["delta0"] = cfg.delta0;
  doc["levels"] = cfg.levels;
  json tol = {{"quad_tol", cfg.tol.quad_tol},   {"cross_tol", cfg.tol.cross_tol},
              {"eig_tol", cfg.tol.eig_tol},     {"ess_margin", cfg.tol.ess_margin},
              {"bound_cap", cfg.tol.bound_cap}, {"tail_tol", cfg.tol.tail_tol}};
  if (cfg.tol.deg_tol) tol["deg_tol"] = *cfg.tol.deg_tol;
  doc["tolerances"] = tol;
  doc["test_function"] = cfg.test_function;
  json w = json::array();
  for (const auto& [a, b] : cfg.windows) w.push_back({a, b});
  doc["windows"] = w;
  doc["seed"] = cfg.seed;
  json scan = {{"nx", cfg.scan_nx}, {"ny", cfg.scan_ny}, {"probes", cfg.probes_randomized}};
  if (cfg.region) scan["region"] = {cfg.region->re_lo, cfg.region->re_hi, cfg.region->im_lo, cfg.region->im_hi};
  doc["scan"] = scan;
  doc["trials"] = cfg.trials;
  doc["tail_s"] = cfg.tail_s;
  doc["oracle"] = {{"t_points", cfg.oracle_t_points}, {"k_max", cfg.oracle_k_max}};
  doc["asymptotics"] = {{"k_lo", cfg.asym_k_lo}, {"k_hi", cfg.asym_k_hi}};
  doc["out"] = cfg.out_dir;
  return doc;
}

}  // namespace blochspec
