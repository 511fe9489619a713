#pragma once

#include <vector>

namespace blochspec {

// A panel rule on [-1, 1]. `gauss_w` holds the weights of the embedded Gauss rule
// (zero at Kronrod-only nodes) and is empty for plain Gauss-Legendre.
struct PanelRule {
  std::vector<double> x;
  std::vector<double> w;
  std::vector<double> gauss_w;
};

const PanelRule& gauss_legendre16();
const PanelRule& gauss_kronrod15();

struct QuadNode {
  double x = 0.0;
  double w = 0.0;
  double gauss_w = 0.0;  // weight in the embedded rule, when there is one
};

// Sorted breakpoints covering [lo, hi]: the endpoints, every split strictly inside,
// and extra uniform cuts so no panel is wider than max_width.
std::vector<double> panel_breaks(double lo, double hi, const std::vector<double>& splits, double max_width);

// Nodes of the composite rule over consecutive breakpoints.
std::vector<QuadNode> composite_nodes(const std::vector<double>& breaks, const PanelRule& rule);

}  // namespace blochspec
