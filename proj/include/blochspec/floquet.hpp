#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "blochspec/common.hpp"
#include "blochspec/operator_model.hpp"

namespace blochspec {

// Fundamental matrix U(1) of the first-order companion system for l(y) = lambda y,
// U(0) = I. Rows/columns are ordered (y, y', ..., y^(n-1)) in blocks of m.
struct MonodromyResult {
  Complex lambda;
  CMat M;
  CMat dM;  // dM/dlambda from the variational equation; empty unless requested
  double integrator_tol = 0.0;
  double est_error = 0.0;  // accumulated local error bound, relative to max|U|
  std::size_t steps = 0;
};

// Throws IntegratorStall when the adaptive integrator cannot make progress.
MonodromyResult monodromy(const OperatorSpec& spec, Complex lambda, double tol = 1e-11,
                          bool with_derivative = false);

// Coefficients of chi(z) = det(z I - M): coeffs[j] multiplies z^j and coeffs[nm] = 1.
// On the unit circle chi(e^{it}) = (-1)^{nm} det(M - e^{it} I).
struct CharPoly {
  Complex lambda;
  std::vector<Complex> coeffs;
  std::vector<Complex> dcoeffs;  // d coeffs / d lambda; empty unless requested

  int degree() const { return static_cast<int>(coeffs.size()) - 1; }
  Complex operator()(Complex z) const;
  Complex derivative_lambda(Complex z) const;
};

// Characteristic polynomial of a matrix from the product of (z - z_i) over its eigenvalues.
std::vector<Complex> charpoly_of(const CMat& M);

CharPoly char_poly_coeffs(const MonodromyResult& mono);
CharPoly char_poly_coeffs(const OperatorSpec& spec, Complex lambda, double tol = 1e-11,
                          bool with_derivative = false);

// det(e^{it} I - M), monic in e^{it}.
Complex char_det(const MonodromyResult& mono, double t);
Complex char_det(const OperatorSpec& spec, Complex lambda, double t, double tol = 1e-11);

// Smallest singular value of (M - e^{it} I) divided by ||M||_2: a scale-free
// measure of how close e^{it} is to a Floquet multiplier.
double multiplier_gap(const MonodromyResult& mono, double t);

// Newton iteration on lambda -> det(e^{it} I - M(lambda)) from each seed.
// Returns the converged roots, duplicates merged.
std::vector<Complex> char_roots(const OperatorSpec& spec, double t, const std::vector<Complex>& seeds,
                                double tol = 1e-11, int max_iter = 60);

// log of the resultant Res_z(chi, d chi / d lambda), as log|R| + i arg R.
Complex log_resultant(const CharPoly& poly);
Complex log_resultant(const OperatorSpec& spec, Complex lambda, double tol = 1e-11);

struct Region {
  double re_lo = 0.0, re_hi = 0.0, im_lo = 0.0, im_hi = 0.0;
};

struct ScanOptions {
  int nx = 24;
  int ny = 24;
  double refine_tol = 1e-10;
  double unit_circle_tol = 1e-6;
  double integrator_tol = 1e-11;
  int max_newton = 40;
};

struct DegeneracyEntry {
  Complex a;
  int multiplicity = 0;  // winding number of R around a
  std::vector<double> A;  // t in (-pi, pi] with chi(e^{it}, a) = 0
  double residual = 0.0;  // max |chi(e^{it}, a)| over A
};

struct DegeneracyCatalog {
  Region region;
  std::vector<DegeneracyEntry> entries;  // only a with nonempty A
  std::vector<Complex> dropped;          // zeros of R whose multipliers are off the unit circle
  std::vector<Complex> diverged;         // candidates whose refinement failed
  std::vector<double> A;                 // sorted union of all A_k

  bool empty() const { return entries.empty(); }
};

// Zeros of R in the region by argument-principle winding on an nx x ny grid,
// polished by Newton with multiplicity, then the A sets from the roots of chi.
DegeneracyCatalog resultant_scan(const OperatorSpec& spec, const Region& region, const ScanOptions& opts = {});

// t values on the unit circle for a given lambda: roots of chi clustered so that a
// numerically split multiple root is tested by its centroid.
std::vector<double> quasimomenta_of(const CharPoly& poly, double unit_circle_tol);

}  // namespace blochspec
