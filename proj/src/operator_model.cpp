#include "blochspec/operator_model.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

namespace blochspec {

namespace {

constexpr double kPruneTol = 0.0;  // exact zeros only; callers decide on truncation

double binomial(int a, int b) {
  if (b < 0 || b > a) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= b; ++i) r = r * (a - b + i) / i;
  return r;
}

}  // namespace

// ---------------------------------------------------------------- ScalarFourier

ScalarFourier::ScalarFourier(std::map<int, Complex> coeffs) : coeffs_(std::move(coeffs)) { prune(); }

ScalarFourier ScalarFourier::constant(Complex c) {
  ScalarFourier s;
  s.set(0, c);
  return s;
}

Complex ScalarFourier::coeff(int q) const {
  auto it = coeffs_.find(q);
  return it == coeffs_.end() ? Complex{} : it->second;
}

void ScalarFourier::set(int q, Complex value) {
  if (std::abs(value) <= kPruneTol)
    coeffs_.erase(q);
  else
    coeffs_[q] = value;
}

int ScalarFourier::bandwidth() const {
  int b = 0;
  for (const auto& [q, c] : coeffs_) b = std::max(b, std::abs(q));
  return b;
}

Complex ScalarFourier::operator()(double x) const {
  Complex s{};
  for (const auto& [q, c] : coeffs_) s += c * std::exp(kI * (kTwoPi * q * x));
  return s;
}

ScalarFourier ScalarFourier::derivative() const {
  ScalarFourier d;
  for (const auto& [q, c] : coeffs_) d.set(q, c * kI * (kTwoPi * q));
  return d;
}

ScalarFourier ScalarFourier::periodic_antiderivative() const {
  ScalarFourier a;
  for (const auto& [q, c] : coeffs_)
    if (q != 0) a.set(q, c / (kI * (kTwoPi * q)));
  return a;
}

ScalarFourier ScalarFourier::operator+(const ScalarFourier& o) const {
  ScalarFourier r = *this;
  for (const auto& [q, c] : o.coeffs_) r.set(q, r.coeff(q) + c);
  return r;
}

ScalarFourier ScalarFourier::operator*(const ScalarFourier& o) const {
  std::map<int, Complex> acc;
  for (const auto& [qa, a] : coeffs_)
    for (const auto& [qb, b] : o.coeffs_) acc[qa + qb] += a * b;
  return ScalarFourier(std::move(acc));
}

ScalarFourier ScalarFourier::operator*(Complex s) const {
  ScalarFourier r;
  for (const auto& [q, c] : coeffs_) r.set(q, c * s);
  return r;
}

void ScalarFourier::prune() {
  for (auto it = coeffs_.begin(); it != coeffs_.end();)
    it = std::abs(it->second) <= kPruneTol ? coeffs_.erase(it) : std::next(it);
}

// ---------------------------------------------------------------- MatrixFourier

CMat MatrixFourier::coeff(int q) const {
  auto it = coeffs_.find(q);
  return it == coeffs_.end() ? CMat::Zero(dim_, dim_) : it->second;
}

void MatrixFourier::set(int q, const CMat& value) {
  if (value.rows() != dim_ || value.cols() != dim_)
    throw ValidationError("InvalidOperator", "matrix coefficient has wrong shape");
  if (value.cwiseAbs().maxCoeff() <= kPruneTol)
    coeffs_.erase(q);
  else
    coeffs_[q] = value;
}

void MatrixFourier::add(int q, const CMat& value) { set(q, coeff(q) + value); }

int MatrixFourier::bandwidth() const {
  int b = 0;
  for (const auto& [q, c] : coeffs_) b = std::max(b, std::abs(q));
  return b;
}

CMat MatrixFourier::operator()(double x) const {
  CMat s = CMat::Zero(dim_, dim_);
  for (const auto& [q, c] : coeffs_) s += c * std::exp(kI * (kTwoPi * q * x));
  return s;
}

MatrixFourier MatrixFourier::operator+(const MatrixFourier& o) const {
  MatrixFourier r = *this;
  for (const auto& [q, c] : o.coeffs_) r.add(q, c);
  return r;
}

MatrixFourier MatrixFourier::times_scalar(const ScalarFourier& s) const {
  MatrixFourier r(dim_);
  for (const auto& [qa, a] : coeffs_)
    for (const auto& [qb, b] : s.coeffs()) r.add(qa + qb, a * b);
  return r;
}

// ---------------------------------------------------------------- OperatorSpec

OperatorSpec::OperatorSpec(int order, int dim) : n(order), m(dim) {
  P.assign(static_cast<std::size_t>(std::max(order, 0) + 1), MatrixFourier(dim));
}

int OperatorSpec::max_bandwidth() const {
  int b = p1.bandwidth();
  for (int nu = 2; nu <= n; ++nu) b = std::max(b, coefficient(nu).bandwidth());
  return b;
}

void OperatorSpec::validate() const {
  if (n < 2) throw ValidationError("InvalidOperator", "order n must be >= 2", "n");
  if (m < 1) throw ValidationError("InvalidOperator", "dimension m must be >= 1", "m");
  if (static_cast<int>(P.size()) != n + 1)
    throw ValidationError("InvalidOperator", "coefficient list must hold P[0..n]", "P");
  for (int nu = 0; nu <= n; ++nu)
    if (coefficient(nu).dim() != m)
      throw ValidationError("InvalidOperator", "coefficient dimension mismatch",
                            "P/" + std::to_string(nu));
}

// ---------------------------------------------------------------- mean matrix

double default_deg_tol(const CMat& C) {
  double norm = C.size() == 0 ? 0.0 : C.operatorNorm();
  return 1e-8 * (1.0 + norm);
}

MeanMatrixData compute_mean_matrix(const OperatorSpec& spec, bool force,
                                   std::optional<double> deg_tol) {
  spec.validate();
  const int m = spec.m;
  MeanMatrixData out;
  out.C = spec.coefficient(2).coeff(0);
  out.deg_tol = deg_tol.value_or(default_deg_tol(out.C));

  Eigen::ComplexEigenSolver<CMat> es(out.C, true);
  if (es.info() != Eigen::Success) throw NumericalError("EigensolverFailure", "mean matrix eigensolve failed");

  // Deterministic order: ascending real part, then imaginary part.
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
  const CVec& ev = es.eigenvalues();
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (ev[a].real() != ev[b].real()) return ev[a].real() < ev[b].real();
    return ev[a].imag() < ev[b].imag();
  });

  out.mu.resize(m);
  out.v.resize(m, m);
  for (int j = 0; j < m; ++j) {
    const int src = order[static_cast<std::size_t>(j)];
    out.mu[j] = ev[src];
    CVec col = es.eigenvectors().col(src).normalized();
    // Gauge: largest component real and positive.
    Eigen::Index imax = 0;
    col.cwiseAbs().maxCoeff(&imax);
    col *= std::conj(col[imax]) / std::abs(col[imax]);
    out.v.col(j) = col;
  }

  out.min_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) out.min_gap = std::min(out.min_gap, std::abs(out.mu[i] - out.mu[j]));
  out.simple = out.min_gap > out.deg_tol;

  if (out.simple) {
    // Rows of V^{-1} are the left eigenvectors with w_j^H v_i = delta_ij.
    CMat w = out.v.partialPivLu().inverse();
    out.u = w.adjoint();
  } else {
    out.u = CMat::Zero(m, m);
    if (!force)
      throw NumericalError("DegenerateMeanMatrix",
                           "eigenvalues of the mean matrix C are not simple (min gap " +
                               std::to_string(out.min_gap) + ")");
  }
  return out;
}

// ---------------------------------------------------------------- reduction

ReducedSpec reduce_p1(const OperatorSpec& spec) {
  spec.validate();
  const int n = spec.n;
  const int m = spec.m;
  ReducedSpec red;
  red.r = spec.p1.mean() / static_cast<double>(n);

  // Y = E * Ytilde with E'/E = w = -p1/n gives E^(j) = E * g_j,
  // g_0 = 1, g_{j+1} = g_j' + w g_j. Dividing l(Y) by E leaves
  // coefficient  sum_{mu<=nu} C(n-mu, n-nu) P_mu g_{nu-mu}  on Ytilde^(n-nu).
  const ScalarFourier w = spec.p1 * Complex(-1.0 / n, 0.0);
  std::vector<ScalarFourier> g(static_cast<std::size_t>(n + 1));
  g[0] = ScalarFourier::constant(1.0);
  for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(j + 1)] = g[static_cast<std::size_t>(j)].derivative() + w * g[static_cast<std::size_t>(j)];

  red.reduced = OperatorSpec(n, m);
  const CMat eye = CMat::Identity(m, m);
  for (int nu = 2; nu <= n; ++nu) {
    // Scalar part from the leading term (mu = 0) and the p1 term (mu = 1).
    ScalarFourier scalar = g[static_cast<std::size_t>(nu)] * Complex(binomial(n, n - nu), 0.0) +
                           spec.p1 * g[static_cast<std::size_t>(nu - 1)] * Complex(binomial(n - 1, n - nu), 0.0);
    MatrixFourier acc(m);
    for (const auto& [q, c] : scalar.coeffs()) acc.add(q, c * eye);
    for (int mu = 2; mu <= nu; ++mu) {
      const double b = binomial(n - mu, n - nu);
      MatrixFourier term = spec.coefficient(mu).times_scalar(g[static_cast<std::size_t>(nu - mu)] * Complex(b, 0.0));
      acc = acc + term;
    }
    red.reduced.coefficient(nu) = acc;
    if (nu == 2) red.q = scalar;
  }
  return red;
}

ConditionReport classify_conditions(const OperatorSpec& spec, const MeanMatrixData& mean,
                                    const ReducedSpec& red) {
  ConditionReport rep;
  rep.simple_mean = mean.simple;
  rep.n_r = static_cast<double>(spec.n) * red.r;
  const bool odd = spec.n % 2 == 1;
  rep.condition1 = odd && mean.simple;
  rep.condition2 = !odd && mean.simple && std::abs(rep.n_r.real()) > 0.0;
  rep.asymptotically_spectral_expected = rep.condition1 || rep.condition2;
  if (!mean.simple)
    rep.note = "eigenvalues of the mean matrix C are not simple";
  else if (!odd && !rep.condition2)
    rep.note = "n even with Re(n r) = 0: excluded case, the operator need not be asymptotically spectral";
  else
    rep.note = odd ? "n odd with simple C" : "n even with simple C and Re(n r) != 0";
  return rep;
}

// ---------------------------------------------------------------- JSON

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& path, const std::string& msg) {
  throw ValidationError("ConfigInvalid", msg, path);
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; });
    if (!ok) config_error(path + "/" + it.key(), "unknown field '" + it.key() + "'");
  }
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) config_error(path, "expected a number");
  return j.get<double>();
}

int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) config_error(path, "expected an integer");
  return j.get<int>();
}

Complex as_pair(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) config_error(path, "expected [re, im]");
  return {as_number(j[0], path + "/0"), as_number(j[1], path + "/1")};
}

}  // namespace

OperatorSpec operator_from_json(const json& doc) {
  if (!doc.is_object()) config_error("", "operator document must be an object");
  reject_unknown(doc, {"n", "m", "p1", "P"}, "");
  if (!doc.contains("n")) config_error("/n", "missing field");
  if (!doc.contains("m")) config_error("/m", "missing field");
  const int n = as_int(doc["n"], "/n");
  const int m = as_int(doc["m"], "/m");
  if (n < 2) config_error("/n", "order n must be >= 2");
  if (m < 1) config_error("/m", "dimension m must be >= 1");
  OperatorSpec spec(n, m);

  if (doc.contains("p1")) {
    const json& p1 = doc["p1"];
    if (!p1.is_array()) config_error("/p1", "expected an array of [q, re, im]");
    for (std::size_t i = 0; i < p1.size(); ++i) {
      const std::string path = "/p1/" + std::to_string(i);
      if (!p1[i].is_array() || p1[i].size() != 3) config_error(path, "expected [q, re, im]");
      const int q = as_int(p1[i][0], path + "/0");
      spec.p1.set(q, spec.p1.coeff(q) + Complex(as_number(p1[i][1], path + "/1"), as_number(p1[i][2], path + "/2")));
    }
  }

  if (doc.contains("P")) {
    const json& P = doc["P"];
    if (!P.is_object()) config_error("/P", "expected an object keyed by coefficient index");
    for (auto it = P.begin(); it != P.end(); ++it) {
      const std::string key = it.key();
      const std::string base = "/P/" + key;
      int nu = 0;
      try {
        std::size_t used = 0;
        nu = std::stoi(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        config_error(base, "coefficient key must be an integer");
      }
      if (nu < 2 || nu > n) config_error(base, "coefficient index must lie in 2..n");
      if (!it.value().is_array()) config_error(base, "expected an array of [q, matrix]");
      for (std::size_t h = 0; h < it.value().size(); ++h) {
        const json& term = it.value()[h];
        const std::string tpath = base + "/" + std::to_string(h);
        if (!term.is_array() || term.size() != 2) config_error(tpath, "expected [q, [[re,im], ...]]");
        const int q = as_int(term[0], tpath + "/0");
        const json& entries = term[1];
        if (!entries.is_array() || entries.size() != static_cast<std::size_t>(m * m))
          config_error(tpath + "/1", "expected m*m = " + std::to_string(m * m) + " [re,im] entries (row-major)");
        CMat mat(m, m);
        for (int a = 0; a < m; ++a)
          for (int b = 0; b < m; ++b) {
            const std::size_t idx = static_cast<std::size_t>(a * m + b);
            mat(a, b) = as_pair(entries[idx], tpath + "/1/" + std::to_string(idx));
          }
        spec.coefficient(nu).add(q, mat);
      }
    }
  }
  return spec;
}

OperatorSpec load_operator(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("ConfigInvalid", "cannot open operator file '" + path + "'", path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ValidationError("ConfigInvalid", std::string("operator JSON parse error: ") + e.what(), path);
  }
  return operator_from_json(doc);
}

json operator_to_json(const OperatorSpec& spec) {
  json doc;
  doc["n"] = spec.n;
  doc["m"] = spec.m;
  json p1 = json::array();
  for (const auto& [q, c] : spec.p1.coeffs()) p1.push_back({q, c.real(), c.imag()});
  doc["p1"] = p1;
  json P = json::object();
  for (int nu = 2; nu <= spec.n; ++nu) {
    const auto& coeffs = spec.coefficient(nu).coeffs();
    if (coeffs.empty()) continue;
    json terms = json::array();
    for (const auto& [q, mat] : coeffs) {
      json entries = json::array();
      for (int a = 0; a < spec.m; ++a)
        for (int b = 0; b < spec.m; ++b) entries.push_back({mat(a, b).real(), mat(a, b).imag()});
      terms.push_back({q, entries});
    }
    P[std::to_string(nu)] = terms;
  }
  doc["P"] = P;
  return doc;
}

}  // namespace blochspec
