#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "blochspec/band_tracker.hpp"
#include "blochspec/floquet.hpp"
#include "blochspec/galerkin.hpp"
#include "blochspec/test_function.hpp"

namespace blochspec {

// Square region |Re lambda|, |Im lambda| <= R for the resultant scan, R = 1.1 max |lambda| over
// the low branches (and at least 10), capped at the leading-term size (2 pi (k_cap + 1/2))^n.
// Labelled branches beyond N0 are separated by construction and need no scan.
Region default_scan_region(const BandSet& bands, int k_cap = 2);

// Norm of the rank-one projection f -> (f, X) Psi, i.e. 1/|alpha|; +inf for flagged pairs.
double projection_norm(const BlochEigenpair& pair);

// (f, X) Psi in coefficient space. Throws FlaggedPair when alpha is below the floor.
CVec rank1_projection_apply(const BlochEigenpair& pair, const CVec& f);
// sum over J of (f, X_p) Psi_p for columns J of one eigensystem.
CVec projection_apply(const EigenSystem& sys, const std::vector<int>& J, const CVec& f);
// Operator 2-norm of sum over J of Psi_p X_p^H.
double projection_operator_norm(const EigenSystem& sys, const std::vector<int>& J);

// Largest |(f, X)| ||Psi|| over `trials` random unit f, each pushed one power step
// towards the maximiser of the quotient.
double empirical_projection_norm(const BlochEigenpair& pair, int trials, std::uint64_t seed);

struct ProjectionScanOptions {
  int trials = 100;
  std::uint64_t seed = 42;
  double bound_cap = 1e6;
  // Window of trusted eigenvalues. Defaults: M = largest |lambda| of the low branches,
  // M_max = smallest |lambda| of the |k| = K/2 branches.
  std::optional<double> M_threshold;
  std::optional<double> M_max;
};

struct ProjectionScanReport {
  double sup = 0.0;
  double t_at_sup = 0.0;
  double M_threshold = 0.0;
  double M_max = 0.0;
  int trials = 0;
  int evaluations = 0;  // (t, gamma) pairs with at least one enclosed eigenvalue
  bool bounded = false;
};

// Random finite unions of half-closed rectangles inside M < |lambda| < M_max, the norm
// of the summed projection at every grid point, and the supremum.
ProjectionScanReport bounded_projection_scan(const BandSet& bands, const ProjectionScanOptions& opts = {});

struct PowerFit {
  double slope = 0.0;
  double r2 = 1.0;
  double log_spread = 0.0;  // max - min of the fitted log values
  double min_value = 0.0;
  double max_value = 0.0;
};

// Least-squares slope of log value(t0 +- delta0 2^-l) against log(delta0 2^-l), l < levels.
PowerFit fit_power_law(const std::function<double(double)>& value, double t0, double delta0, int levels);

struct BlowupFit {
  double beta = 0.0;         // |alpha| ~ c |t - t0|^beta
  double fit_quality = 1.0;  // R^2; 1 for a flat profile
  bool poor = false;         // R^2 < 0.9 on a profile that is not flat
  double sup_inverse = 0.0;  // sup of 1/|alpha| over the probe points
};

BlowupFit fit_blowup_exponent(const std::function<double(double)>& abs_alpha, double t0, double delta0, int levels);

enum class SingularityClass { regular_multiple, spectral_singularity, essential_spectral_singularity, undetermined };
std::string to_string(SingularityClass c);

// What the classifier needs near one (a, t0): |alpha| of the involved branches and the
// integrands g(t) = |a_k(t)| ||Psi_{k,t}|| for each probe function.
struct BranchProbe {
  std::function<double(double)> abs_alpha;
  std::vector<std::function<double(double)>> g;
};

struct ClassifyOptions {
  double delta0 = 0.05;  // upper bound; shrunk below half the gap to the next point of A
  int levels = 8;
  double bound_cap = 1e6;
  double ess_margin = 0.05;
  double beta_tol = 0.1;  // beta above this counts as blow-up
  double cluster_tol = 1e-3;  // relative radius for eigenvalues counted as equal to a at t0
  int K = 32;
};

struct PointClassification {
  double t0 = 0.0;
  std::vector<int> branches;  // p labels
  int multiplicity = 0;       // Galerkin eigenvalues equal to a at t0
  double delta0 = 0.0;
  BlowupFit alpha_fit;
  double beta_g = 0.0;  // worst blow-up exponent of g over the probe functions
  double fit_quality_g = 1.0;
  SingularityClass cls = SingularityClass::regular_multiple;
  bool integrable = true;
};

PointClassification classify_point(const BranchProbe& probe, double t0, const ClassifyOptions& opts);

struct MultipleEigenvalueReport {
  Complex a;
  std::vector<double> A;
  std::vector<PointClassification> entries;
};

struct SingularityReport {
  std::vector<MultipleEigenvalueReport> multiple_eigenvalues;
  std::vector<double> E;  // singular quasimomenta, increasing
  std::vector<int> S;     // branches that meet an ESS
  std::map<int, std::vector<int>> S_i;                  // keyed by 1-based index into E
  std::map<int, std::map<int, std::vector<int>>> S_ij;  // i -> bundle j (1-based) -> branches
  std::map<int, std::vector<Complex>> Lambda;           // i -> the ESS Lambda_j(t_i)
  double bound_cap = 0.0;
  double ess_margin = 0.0;
};

// Builds E, S, S_i and S_ij from classified points (used directly by synthetic tests).
void assemble_sets(SingularityReport& report);

// Probe of the eigenvalues within cluster_tol of a, solved at K, for the given test functions.
BranchProbe make_branch_probe(const OperatorSpec& spec, Complex a, int cluster, int K,
                              const std::vector<TestFunction>& probes);

SingularityReport classify_singularities(const OperatorSpec& spec, const DegeneracyCatalog& catalog,
                                         const BandSet& bands, const std::vector<TestFunction>& probes,
                                         const ClassifyOptions& opts = {});

// The probe family: the given f plus `randomized` random smooth functions on the same support.
std::vector<TestFunction> probe_family(const TestFunction& f, int randomized, std::uint64_t seed);

nlohmann::json singularity_report_to_json(const SingularityReport& report);

}  // namespace blochspec
