#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"

#include "blochspec/band_tracker.hpp"
#include "blochspec/galerkin.hpp"
#include "blochspec/singularity.hpp"
#include "blochspec/test_function.hpp"

namespace blochspec {

// f_t(x) = sum_l f(x + l) exp(-ilt); m x xs.size().
CMat gelfand_transform(const TestFunction& f, double t, std::span<const double> xs);

// Max over xs of |(1/2pi) int f_t(x) dt - f(x)| with an n_t point periodic rule.
double gelfand_inversion_error(const TestFunction& f, std::span<const double> xs, int n_t);
// (1/2pi) int ||f_t||^2_(0,1) dt with an n_t point periodic rule, against ||f||^2.
std::pair<double, double> gelfand_parseval(const TestFunction& f, int n_t);

enum class CoefficientMode {
  cell,      // int_0^1 f_t conj(X) by quadrature on the fundamental cell
  line,      // int over supp f of f conj(X), X extended quasi-periodically
  spectral,  // X^H applied to the Bloch coefficients of f_t
};

// a_k(t) = (f_t, X_{k,t}). Throws FlaggedPair for pairs below the alpha floor.
Complex coefficient_a(const TestFunction& f, const BlochEigenpair& pair, CoefficientMode mode = CoefficientMode::spectral);

// Values of an integrand on a fixed output grid, as a function of the quasimomentum.
using Integrand = std::function<CMat(double)>;

struct BranchQuadOptions {
  double max_width = 1.0;
  int max_levels = 40;
  double tol = 1e-10;
};

struct BranchIntegral {
  CMat value;
  double error = 0.0;  // change of the last refinement (after extrapolation when used)
  int levels = 0;
  bool converged = false;
};

// Composite Gauss-Kronrod over (-pi, pi] with panels cut at `singular`; the panels next
// to each singular point are halved towards it until the extrapolated values settle.
// Throws NonIntegrableBranch when the refinement sequence does not contract.
BranchIntegral integrate_branch(const Integrand& g, Eigen::Index rows, Eigen::Index cols,
                                const std::vector<double>& singular, const BranchQuadOptions& opts = {});

struct HuddleOptions {
  double delta0 = 0.25;
  int levels = 12;
  double tail_tol = 1e-6;
};

struct HuddleResult {
  std::vector<double> deltas;
  std::vector<CMat> sequence;
  std::vector<CMat> extrapolated;
  CMat limit;
  double order = 0.0;  // observed convergence order in delta
  double tail = 0.0;   // max |R_L - R_(L-1)| of the extrapolated sequence
  bool converged = true;
};

// I(delta) = int over (-pi, pi] minus the windows (t_i - delta, t_i + delta), for
// delta = delta0 2^-l, with Richardson extrapolation at the observed order. An empty
// integrand (S empty) gives zeros. Throws ConfigInvalid when delta0 is not below half
// the smallest gap between points of E.
HuddleResult huddled_integral(const Integrand& sum_over_S, Eigen::Index rows, Eigen::Index cols,
                              const std::vector<double>& E, const HuddleOptions& opts = {});

struct ExpansionParams {
  int K = 64;
  int K_branch = 32;
  std::vector<int> extra_cuts;  // smaller K_branch values reported from the same run
  std::vector<std::pair<double, double>> windows{{-2.0, 2.0}};
  double t_panel = 1.2;     // widest t panel
  double x_panel = 1.0 / 16.0;  // widest x panel of the error quadrature
  HuddleOptions huddle;
  bool force = false;
};

struct WindowError {
  double a = 0.0;
  double b = 0.0;
  double l2_error = 0.0;
  double l2_f = 0.0;
};

struct BranchRecord {
  int p = 0;
  std::optional<int> k;
  std::optional<int> j;
  bool in_S = false;
  double norm = 0.0;  // L2 norm over the windows of (1/2pi) int a_p Psi_p dt
};

struct ExpansionResult {
  int K = 0;
  int K_branch = 0;
  int N0 = 0;
  int N1 = 0;
  std::vector<double> x;   // quadrature nodes over the windows
  std::vector<double> xw;  // their weights
  CMat f_samples;
  CMat reconstruction;
  std::vector<WindowError> errors;
  std::vector<std::pair<int, std::vector<WindowError>>> cut_errors;  // (K_branch, errors)
  std::vector<BranchRecord> branches;
  std::optional<HuddleResult> huddle;
  bool huddle_converged = true;
  std::vector<double> delta_sequence;
  double quad_error = 0.0;           // Kronrod vs embedded Gauss on the summed integrand
  double termwise_vs_summed = 0.0;   // low branches summed before t-integration vs termwise
  double termwise_vs_huddled = 0.0;         // all termwise vs huddled S plus the rest
  double truncation_tail = 0.0;
  std::size_t t_nodes = 0;
};

// Reconstruction (1/2pi)[huddle over S + sum over p <= (2 K_branch + 1) m, p not in S].
// A and the report's E cut the t panels.
ExpansionResult reconstruct(const OperatorSpec& spec, const TestFunction& f, const ExpansionParams& params,
                            const std::vector<double>& A, const SingularityReport* report = nullptr);

// (1/2pi) int_{|omega| <= Omega} hat f(omega) exp(i omega x) d omega on the given points.
CMat bandlimited_fourier(const TestFunction& f, double Omega, std::span<const double> xs);

// sqrt(sum w |a - b|^2) over the points.
double l2_distance(const CMat& a, const CMat& b, std::span<const double> w);

struct TailBoundOptions {
  std::vector<int> s_values{4, 8};
  int trials = 100;
  std::uint64_t seed = 42;
};

struct TailBoundRow {
  int s = 0;
  double c = 0.0;    // smallest constant satisfying both inequalities on the trials
  double c32 = 0.0;  // worst ratio for the inequality with the coefficient sum and s^{-1/2} term
  double c33 = 0.0;  // worst ||sum (f, X) Psi||^2 / ||f||^2
};

struct TailBoundReport {
  std::vector<TailBoundRow> rows;
  double max_variation = 0.0;  // largest |c(2s) - c(s)| / c(s) over listed pairs s, 2s
  bool stable = false;
};

// For random (J, t) with J inside Z(s) and |k| <= K/2, the worst constant over f (the
// maximiser is found exactly from a generalised eigenproblem).
TailBoundReport tail_bound_check(const BandSet& bands, const TailBoundOptions& opts = {});

nlohmann::json expansion_report_to_json(const ExpansionResult& r);

}  // namespace blochspec
