#pragma once

#include <span>
#include <vector>

#include "blochspec/common.hpp"
#include "blochspec/operator_model.hpp"

namespace blochspec {

// Dense discretisation of T_t in the basis e_j exp(i(2 pi k + t)x), |k| <= K.
// Basis index of (k, j) is (k + K) * m + j with j zero-based.
struct GalerkinMatrix {
  Complex t;
  int K = 0;
  int m = 1;
  CMat entries;

  int dim() const { return static_cast<int>(entries.rows()); }
};

inline int basis_index(int k, int j, int K, int m) { return (k + K) * m + j; }
inline int basis_k(int index, int K, int m) { return index / m - K; }
inline int basis_j(int index, int m) { return index % m; }

// (e(t))^{-2} = int_0^1 |exp(itx)|^2 dx, in closed form.
double e_norm(Complex t);

GalerkinMatrix assemble_matrix(const OperatorSpec& spec, Complex t, int K);

struct SolveOptions {
  double alpha_floor = 1e-12;
};

// One Bloch eigenpair. psi and psi_star are unit coefficient vectors;
// X = psi_star / conj(alpha) is the biorthogonal partner with (psi, X) = 1.
struct BlochEigenpair {
  int p = 0;  // raw index in the |lambda|-sorted spectrum unless relabelled
  Complex t;
  int K = 0;
  int m = 1;
  Complex lambda;
  CVec psi;
  CVec psi_star;
  Complex alpha;
  CVec X;
  double e_norm = 1.0;
  bool flagged = false;  // |alpha| below alpha_floor: near-defective
};

// All eigenpairs of one Galerkin matrix, sorted by ascending |lambda| (ties by phase).
// Columns of `right` and `left` are unit vectors; left(:,p) is the eigenvector of the
// adjoint matrix for conj(lambda_p).
struct EigenSystem {
  Complex t;
  int K = 0;
  int m = 1;
  int n = 2;
  CVec lambda;
  CMat right;
  CMat left;
  CVec alpha;
  std::vector<bool> flagged;

  int size() const { return static_cast<int>(lambda.size()); }
  CVec X(int p) const { return left.col(p) / std::conj(alpha[p]); }
  BlochEigenpair pair(int p) const;
  std::vector<BlochEigenpair> pairs() const;
};

EigenSystem solve_eigensystem(const GalerkinMatrix& G, int n, const SolveOptions& opts = {});
EigenSystem solve_eigensystem(const OperatorSpec& spec, Complex t, int K, const SolveOptions& opts = {});
std::vector<BlochEigenpair> solve_eigen(const OperatorSpec& spec, Complex t, int K,
                                        const SolveOptions& opts = {});

// Solves at several quasimomenta; results come back in input order.
std::vector<EigenSystem> solve_many(const OperatorSpec& spec, std::span<const double> ts, int K,
                                    const SolveOptions& opts = {});

// alpha = (psi, psi_star) for unit psi, psi_star; |alpha| <= 1.
Complex compute_alpha(const BlochEigenpair& pair);

// Samples of Psi at real points: the fundamental-cell synthesis extended by
// Psi(x + 1) = exp(it) Psi(x). Result is m x xs.size().
CMat evaluate_eigenfunction(const BlochEigenpair& pair, std::span<const double> xs);
// Same synthesis for an arbitrary coefficient vector in the basis at quasimomentum t.
CMat synthesize(const CVec& coeffs, Complex t, int K, int m, std::span<const double> xs);

enum class Reference { free, constantC };

BlochEigenpair reference_eigenpair(const OperatorSpec& spec, int k, int j, Complex t, Reference which);

// Leading term (i(2 pi k + t))^n + mu (i(2 pi k + t))^{n-2}.
Complex leading_term(int n, int k, Complex t, Complex mu);

}  // namespace blochspec
