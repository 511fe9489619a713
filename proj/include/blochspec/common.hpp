#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace blochspec {

using Complex = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr Complex kI{0.0, 1.0};

// Base of every error raised by the library. `kind()` is the stable,
// machine-readable name used in CLI error reports.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Input or configuration did not satisfy a documented precondition.
class ValidationError : public Error {
 public:
  ValidationError(std::string kind, const std::string& what, std::string path = {})
      : Error(std::move(kind), what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// A numerical procedure failed to deliver a result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Map a real angle into (-pi, pi].
inline double wrap_quasimomentum(double t) {
  double w = std::remainder(t, kTwoPi);
  if (w <= -kPi) w += kTwoPi;
  return w;
}

}  // namespace blochspec
