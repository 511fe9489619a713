#pragma once

#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "blochspec/galerkin.hpp"
#include "blochspec/operator_model.hpp"

namespace blochspec {

// Branch numbering for |k| >= N0, j one-based:
//   p = 2|k| m + j for k > 0,  p = (2|k| - 1) m + j for k < 0.
int label_p(int k, int j, int m);
// Inverse of label_p; returns (k, j) with j one-based. Requires p > m.
std::pair<int, int> label_kj(int p, int m);

// N points t_i = -pi + 2 pi (i + 1) / N covering (-pi, pi].
std::vector<double> uniform_t_grid(int N);

struct BandFunction {
  int p = 0;
  std::optional<int> k;  // set for branches labelled by proximity to the leading term
  std::optional<int> j;  // one-based
  bool tail = false;     // beyond the labelled range (|k| > K/2), kept for the partition only
  std::vector<double> t;
  std::vector<Complex> lambda;
  std::vector<double> abs_alpha;
  std::vector<int> raw_index;     // column of the eigensystem at each t
  std::vector<bool> jump_ok;      // jump from the previous sample within threshold (true at i = 0)
  std::vector<double> threshold;  // allowed jump into each sample
  double max_jump = 0.0;
  bool certified = true;
};

struct CrossingSuspect {
  double t_lo = 0.0;
  double t_hi = 0.0;
  std::vector<int> branches;  // p labels involved
  bool unresolved = false;    // continuation stayed ambiguous after max_refine halvings
};

struct TrackOptions {
  double t_ref = 1.0;
  int max_refine = 8;
  double ambiguity_ratio = 2.0;
  SolveOptions solve;
};

struct BandSet {
  int n = 2;
  int m = 1;
  int K = 0;
  int K_lab = 0;  // labelled range |k| <= K_lab = K / 2
  int N0 = 0;
  int N1 = 0;
  bool labelled = false;  // an N0 <= K_lab was found
  Complex r{0.0, 0.0};    // leading terms are taken at t - i r
  CVec mu_shifted;        // eigenvalues of the mean of the reduced P_2
  std::vector<double> t_grid;
  std::vector<EigenSystem> systems;
  std::vector<BandFunction> bands;  // sorted by p
  std::vector<CrossingSuspect> suspects;

  const BandFunction* find(int k, int j) const;  // j one-based
  const BandFunction* find_p(int p) const;
  BlochEigenpair pair(const BandFunction& band, std::size_t sample) const;
  // Leading term of branch (k, j) at real t, with the shift and mean of the reduced operator.
  Complex leading(int k, int j, double t) const;
  // True when t lies within one grid cell of a crossing suspect.
  bool near_suspect(double t) const;
};

// Throws DegenerateMeanMatrix (via compute_mean_matrix) unless `force` is set.
BandSet track_bands(const OperatorSpec& spec, int K, const std::vector<double>& t_grid,
                    const TrackOptions& opts = {}, bool force = false);

// Same, reusing eigensystems already solved on t_grid.
BandSet track_bands(const OperatorSpec& spec, std::vector<EigenSystem> systems, const std::vector<double>& t_grid,
                    const TrackOptions& opts = {}, bool force = false);

// CSV with header p,k,j,t,re_lambda,im_lambda,abs_alpha,continuity_flag.
void write_band_csv(const BandSet& bands, std::ostream& os);

struct ResidualRow {
  int k = 0;
  int j = 0;  // one-based
  double residual = 0.0;
};

struct ResidualFit {
  std::vector<ResidualRow> rows;
  double exponent = 0.0;  // least-squares slope of log(max residual at |k|) against log|k|
  double limit = 0.0;
  bool exact = false;     // residuals at rounding level; exponent meaningless
  bool pass = false;
};

struct AsymptoticsReport {
  ResidualFit eigenvalue;
  ResidualFit psi;
  ResidualFit X;
};

// Residuals max_t |lambda_{k,j}(t) - leading(k, j, t)| for k_lo <= |k| <= k_hi.
// Throws InsufficientRange when k_hi - k_lo < 4.
ResidualFit verify_eigenvalue_asymptotics(const BandSet& bands, int k_lo, int k_hi, double fit_slack = 0.35);

// L2(0,1) residuals of Psi against v_j e^{i(2 pi k + t)x} and of X against u_j e^{i(2 pi k + t)x},
// after aligning the phase of Psi. Meant for r = 0 (use the reduced operator otherwise).
std::pair<ResidualFit, ResidualFit> verify_eigenfunction_asymptotics(const BandSet& bands, const MeanMatrixData& mean,
                                                                     int k_lo, int k_hi, double fit_slack = 0.35);

}  // namespace blochspec
