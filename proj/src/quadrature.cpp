#include "blochspec/quadrature.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace blochspec {

namespace {

// Boost stores the nonnegative half of a symmetric rule; unfold it.
template <class Abs, class W>
void unfold(const Abs& a, const W& w, PanelRule& r) {
  for (std::size_t i = a.size(); i-- > 0;) {
    if (a[i] == 0.0) continue;
    r.x.push_back(-a[i]);
    r.w.push_back(w[i]);
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    r.x.push_back(a[i]);
    r.w.push_back(w[i]);
  }
}

}  // namespace

const PanelRule& gauss_legendre16() {
  static const PanelRule rule = [] {
    PanelRule r;
    using G = boost::math::quadrature::gauss<double, 16>;
    unfold(G::abscissa(), G::weights(), r);
    return r;
  }();
  return rule;
}

const PanelRule& gauss_kronrod15() {
  static const PanelRule rule = [] {
    PanelRule r;
    using GK = boost::math::quadrature::gauss_kronrod<double, 15>;
    using G = boost::math::quadrature::gauss<double, 7>;
    unfold(GK::abscissa(), GK::weights(), r);
    const auto& ga = G::abscissa();
    const auto& gw = G::weights();
    r.gauss_w.assign(r.x.size(), 0.0);
    for (std::size_t i = 0; i < r.x.size(); ++i)
      for (std::size_t g = 0; g < ga.size(); ++g)
        if (std::abs(std::abs(r.x[i]) - ga[g]) < 1e-14) r.gauss_w[i] = gw[g];
    return r;
  }();
  return rule;
}

std::vector<double> panel_breaks(double lo, double hi, const std::vector<double>& splits, double max_width) {
  std::vector<double> b{lo};
  std::vector<double> inner;
  for (double s : splits)
    if (s > lo && s < hi) inner.push_back(s);
  std::sort(inner.begin(), inner.end());
  inner.push_back(hi);
  const double merge = 1e-12 * std::max(1.0, hi - lo);
  for (double s : inner) {
    const double a = b.back();
    if (s - a <= merge) {
      if (s == hi) b.back() = hi;
      continue;
    }
    const int pieces = std::max(1, static_cast<int>(std::ceil((s - a) / max_width - 1e-12)));
    for (int i = 1; i < pieces; ++i) b.push_back(a + (s - a) * i / pieces);
    b.push_back(s);
  }
  return b;
}

std::vector<QuadNode> composite_nodes(const std::vector<double>& breaks, const PanelRule& rule) {
  std::vector<QuadNode> out;
  out.reserve((breaks.size() - 1) * rule.x.size());
  for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
    const double mid = 0.5 * (breaks[p] + breaks[p + 1]);
    const double half = 0.5 * (breaks[p + 1] - breaks[p]);
    for (std::size_t i = 0; i < rule.x.size(); ++i)
      out.push_back({mid + half * rule.x[i], half * rule.w[i], rule.gauss_w.empty() ? 0.0 : half * rule.gauss_w[i]});
  }
  return out;
}

}  // namespace blochspec
