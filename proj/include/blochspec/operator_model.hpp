#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "blochspec/common.hpp"

namespace blochspec {

// Scalar trigonometric polynomial  p(x) = sum_q c_q exp(2 pi i q x).
class ScalarFourier {
 public:
  ScalarFourier() = default;
  explicit ScalarFourier(std::map<int, Complex> coeffs);
  static ScalarFourier constant(Complex c);

  Complex coeff(int q) const;
  void set(int q, Complex value);
  const std::map<int, Complex>& coeffs() const { return coeffs_; }
  int bandwidth() const;
  bool is_zero() const { return coeffs_.empty(); }
  Complex mean() const { return coeff(0); }

  Complex operator()(double x) const;
  ScalarFourier derivative() const;
  // Antiderivative of the zero-mean part, itself with zero mean.
  ScalarFourier periodic_antiderivative() const;

  ScalarFourier operator+(const ScalarFourier& o) const;
  ScalarFourier operator*(const ScalarFourier& o) const;
  ScalarFourier operator*(Complex s) const;

 private:
  void prune();
  std::map<int, Complex> coeffs_;
};

// m x m matrix trigonometric polynomial  P(x) = sum_q P_q exp(2 pi i q x).
class MatrixFourier {
 public:
  MatrixFourier() = default;
  explicit MatrixFourier(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  CMat coeff(int q) const;
  void set(int q, const CMat& value);
  void add(int q, const CMat& value);
  const std::map<int, CMat>& coeffs() const { return coeffs_; }
  int bandwidth() const;
  bool is_zero() const { return coeffs_.empty(); }

  CMat operator()(double x) const;
  MatrixFourier operator+(const MatrixFourier& o) const;
  // Product with a scalar polynomial times the identity.
  MatrixFourier times_scalar(const ScalarFourier& s) const;

 private:
  int dim_ = 0;
  std::map<int, CMat> coeffs_;
};

// The differential expression
//   y^(n) + p1 I y^(n-1) + P_2 y^(n-2) + ... + P_n y
// with 1-periodic coefficients given as trigonometric polynomials.
struct OperatorSpec {
  int n = 2;
  int m = 1;
  ScalarFourier p1;
  // P[nu] for nu = 0..n; entries 0 and 1 are unused and kept empty.
  std::vector<MatrixFourier> P;

  OperatorSpec() = default;
  OperatorSpec(int order, int dim);

  const MatrixFourier& coefficient(int nu) const { return P.at(static_cast<std::size_t>(nu)); }
  MatrixFourier& coefficient(int nu) { return P.at(static_cast<std::size_t>(nu)); }
  int max_bandwidth() const;
  void validate() const;
};

struct MeanMatrixData {
  CMat C;
  CVec mu;
  CMat v;  // columns: unit right eigenvectors of C
  CMat u;  // columns: eigenvectors of C* for conj(mu), (u_j, v_j) = 1
  bool simple = false;
  double min_gap = 0.0;
  double deg_tol = 0.0;
};

// Result of removing the p1 term by  Y = exp(-(1/n) int_0^x p1) Ytilde.
// The reduced operator at quasimomentum t - i r has the spectrum of the
// original operator at t.
struct ReducedSpec {
  Complex r{0.0, 0.0};
  ScalarFourier q;
  OperatorSpec reduced;

  // Quasimomentum of the reduced problem matching quasimomentum t of the original.
  Complex shifted(Complex t) const { return t - kI * r; }
};

struct ConditionReport {
  bool condition1 = false;
  bool condition2 = false;
  bool asymptotically_spectral_expected = false;
  bool simple_mean = false;
  Complex n_r{0.0, 0.0};
  std::string note;
};

double default_deg_tol(const CMat& C);

// Throws DegenerateMeanMatrix when the eigenvalues of C are not simple,
// unless `force` is set, in which case the data is returned with simple = false.
MeanMatrixData compute_mean_matrix(const OperatorSpec& spec, bool force = false,
                                   std::optional<double> deg_tol = std::nullopt);

ReducedSpec reduce_p1(const OperatorSpec& spec);

ConditionReport classify_conditions(const OperatorSpec& spec, const MeanMatrixData& mean,
                                    const ReducedSpec& red);

// JSON ingestion. Unknown fields are rejected; errors carry the offending path.
OperatorSpec operator_from_json(const nlohmann::json& doc);
OperatorSpec load_operator(const std::string& path);
nlohmann::json operator_to_json(const OperatorSpec& spec);

}  // namespace blochspec
