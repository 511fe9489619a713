#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "blochspec/common.hpp"
#include "blochspec/quadrature.hpp"

namespace blochspec {

// A compactly supported f : R -> C^m, sampled once on a composite Gauss-Legendre
// grid over its support (panels of width <= 1/64, cut at the integers).
class TestFunction {
 public:
  using Shape = std::function<CVec(double)>;

  TestFunction(std::string kind, double lo, double hi, int m, Shape shape, double truncation_mass = 0.0);

  // exp(-1/(1 - y^2)) with y mapped from [lo, hi] to [-1, 1], times a weight per component.
  static TestFunction bump(double lo, double hi, const CVec& weights);
  // A Gaussian cut to [lo, hi]; the squared mass outside is reported by truncation_mass().
  static TestFunction gaussian_truncated(double lo, double hi, double center, double width, const CVec& weights);
  // Samples on a uniform grid over [lo, hi], one row per component, cubic B-spline interpolation.
  static TestFunction custom_samples(double lo, double hi, const std::vector<std::vector<Complex>>& samples);
  // Bump times a random trigonometric polynomial per component, normalised to unit L2 norm.
  static TestFunction random_smooth(double lo, double hi, int m, std::uint64_t seed);

  // Reads {"kind", "support", ...}; errors carry the offending path under `where`.
  static TestFunction from_json(const nlohmann::json& doc, int m, const std::string& where = "test_function");

  const std::string& kind() const { return kind_; }
  int m() const { return m_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double truncation_mass() const { return truncation_mass_; }

  // Zero outside [lo, hi].
  CVec operator()(double x) const;
  double norm() const;

  // hat f_j(omega) = int f_j(x) exp(-i omega x) dx.
  CVec fourier(double omega) const;
  // Coefficients of f_t in the basis e_j exp(i(2 pi k + t)x), |k| <= K, index (k + K)m + j;
  // each equals hat f_j(2 pi k + t).
  CVec bloch_coefficients(double t, int K) const;
  // Gelfand transform f_t(x) = sum_l f(x + l) exp(-ilt) at the given points; m x xs.size().
  CMat gelfand(double t, std::span<const double> xs) const;

  const std::vector<QuadNode>& nodes() const { return nodes_; }
  const CMat& node_values() const { return values_; }  // m x nodes

 private:
  std::string kind_;
  double lo_ = 0.0;
  double hi_ = 0.0;
  int m_ = 1;
  Shape shape_;
  double truncation_mass_ = 0.0;
  std::vector<QuadNode> nodes_;
  CMat values_;
};

}  // namespace blochspec
