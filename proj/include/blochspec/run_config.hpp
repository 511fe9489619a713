#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "blochspec/floquet.hpp"
#include "blochspec/operator_model.hpp"

namespace blochspec {

struct Tolerances {
  double quad_tol = 1e-10;   // branch quadrature refinement
  double cross_tol = 1e-6;   // oracle agreement, relative to max(1, ||M||)
  double eig_tol = 1e-10;    // exact-case eigenvalue comparisons
  std::optional<double> deg_tol;  // mean-matrix degeneracy; default scales with ||C||
  double ess_margin = 0.05;
  double bound_cap = 1e6;
  double tail_tol = 1e-6;    // Cauchy tail of the huddled sequence
};

struct RunConfig {
  std::string operator_source;  // path as written, or "inline"
  OperatorSpec op;
  int K = 32;
  int t_grid_size = 64;
  int K_branch = 16;
  std::vector<int> extra_cuts;
  double delta0 = 0.25;  // first huddle window
  int levels = 12;       // huddle levels
  Tolerances tol;
  nlohmann::json test_function = {{"kind", "bump"}, {"support", {-1.0, 1.0}}};
  std::vector<std::pair<double, double>> windows{{-2.0, 2.0}};
  std::uint64_t seed = 42;
  std::optional<Region> region;
  int scan_nx = 24;
  int scan_ny = 24;
  int probes_randomized = 5;
  int trials = 100;
  std::vector<int> tail_s{4, 8};
  int oracle_t_points = 16;
  int oracle_k_max = 8;
  int asym_k_lo = 6;
  int asym_k_hi = 16;
  std::string out_dir = ".";
};

// Unknown keys are rejected; every error is ConfigInvalid with the offending path.
// A relative operator path is resolved against base_dir.
RunConfig parse_run_config(const nlohmann::json& doc, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);

// Throws ConfigInvalid unless tolerances are positive, K >= 2 K_branch and t_grid_size >= 64.
void validate_run_config(const RunConfig& cfg);

nlohmann::json run_config_to_json(const RunConfig& cfg);

}  // namespace blochspec
