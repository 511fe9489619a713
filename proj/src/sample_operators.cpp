#include "blochspec/sample_operators.hpp"

namespace blochspec {

OperatorSpec free_operator(int n, int m) { return OperatorSpec(n, m); }

OperatorSpec constant_operator(int n, const CMat& C) {
  OperatorSpec spec(n, static_cast<int>(C.rows()));
  spec.coefficient(2).set(0, C);
  return spec;
}

namespace {

void add_coupling(OperatorSpec& spec, double eps) {
  CMat B(2, 2);
  B << 0.0, 1.0, 1.0, 0.0;
  CMat C = CMat::Zero(2, 2);
  C(0, 0) = 1.0;
  C(1, 1) = 4.0;
  spec.coefficient(2).set(0, C);
  if (eps != 0.0) {
    spec.coefficient(2).set(1, eps * B);
    spec.coefficient(2).set(-1, eps * B);
  }
}

}  // namespace

OperatorSpec perturbed_operator(double eps) {
  OperatorSpec spec(3, 2);
  add_coupling(spec, eps);
  return spec;
}

OperatorSpec damped_operator(double eps) {
  OperatorSpec spec(2, 2);
  spec.p1 = ScalarFourier::constant(1.0);
  add_coupling(spec, eps);
  return spec;
}

}  // namespace blochspec
