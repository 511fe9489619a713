#pragma once

#include "blochspec/operator_model.hpp"

namespace blochspec {

// Reference operators used by the self-check, the tests and the shipped data files.

OperatorSpec free_operator(int n, int m);

// Constant P_2 = C, everything else zero.
OperatorSpec constant_operator(int n, const CMat& C);

// n = 3, m = 2, P_2(x) = diag(1,4) + eps (e^{2 pi i x} + e^{-2 pi i x}) [[0,1],[1,0]].
OperatorSpec perturbed_operator(double eps = 0.1);

// n = 2, m = 2, p1 = 1, P_2 as in perturbed_operator.
OperatorSpec damped_operator(double eps = 0.1);

}  // namespace blochspec
