#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "klchol/kernel.hpp"
#include "klchol/ordering.hpp"
#include "klchol/sparsity.hpp"

namespace klchol {

struct CholeskyBreakdown : std::runtime_error {
  explicit CholeskyBreakdown(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

// Pins Eigen's internal matrix-product threading to one thread for the
// current scope. Eigen's parallel GEMM picks cache blocking from the
// thread count, which would make large products vary bitwise with
// --threads; parallelism here comes from explicit omp loops instead.
struct SequentialEigenGuard {
  int saved;
  SequentialEigenGuard() : saved(Eigen::nbThreads()) { Eigen::setNbThreads(1); }
  ~SequentialEigenGuard() { Eigen::setNbThreads(saved); }
  SequentialEigenGuard(const SequentialEigenGuard&) = delete;
  SequentialEigenGuard& operator=(const SequentialEigenGuard&) = delete;
};

}  // namespace detail

/// Sparse lower-triangular factor in elimination-position space with
/// L L^T approximating the inverse of the permuted kernel matrix.
struct SparseFactor {
  SparsityPattern pattern;
  std::vector<double> values;
  Ordering ordering;

  int size() const { return pattern.cols(); }
  std::int64_t nnz() const { return pattern.nnz(); }
  double diag(int k) const { return values[pattern.col_ptr[k]]; }

  double sum_log_diag() const {
    double s = 0.0;
    for (int k = 0; k < size(); ++k) s += std::log(diag(k));
    return s;
  }

  /// w = L^T v (v in position space)
  Eigen::VectorXd multiply_transpose(const Eigen::VectorXd& v) const {
    Eigen::VectorXd w(size());
#pragma omp parallel for schedule(static)
    for (int k = 0; k < size(); ++k) {
      double s = 0.0;
      for (int t = pattern.col_ptr[k]; t < pattern.col_ptr[k + 1]; ++t)
        s += values[t] * v[pattern.row_idx[t]];
      w[k] = s;
    }
    return w;
  }

  /// w = L v (v in position space); sequential scatter for determinism
  Eigen::VectorXd multiply(const Eigen::VectorXd& v) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(size());
    for (int k = 0; k < size(); ++k)
      for (int t = pattern.col_ptr[k]; t < pattern.col_ptr[k + 1]; ++t)
        w[pattern.row_idx[t]] += values[t] * v[k];
    return w;
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(size(), size());
    for (int k = 0; k < size(); ++k)
      for (int t = pattern.col_ptr[k]; t < pattern.col_ptr[k + 1]; ++t)
        dense(pattern.row_idx[t], k) = values[t];
    return dense;
  }
};

/// KL-optimal column for a dense SPD block with the target index first:
/// inv(B) e1 / sqrt(e1^T inv(B) e1), computed via one Cholesky and two
/// triangular solves.
inline Eigen::VectorXd kl_column(const Eigen::MatrixXd& theta_block) {
  Eigen::LLT<Eigen::MatrixXd> llt(theta_block);
  if (llt.info() != Eigen::Success)
    throw CholeskyBreakdown("kl_column: block is not positive definite");
  const auto m = theta_block.rows();
  Eigen::VectorXd w = Eigen::VectorXd::Unit(m, 0);
  llt.matrixL().solveInPlace(w);          // w = G^{-1} e1
  const double norm = w.norm();           // sqrt(e1' B^{-1} e1)
  llt.matrixU().solveInPlace(w);          // w = B^{-1} e1
  return w / norm;
}

namespace detail {

inline Eigen::MatrixXd assemble_position_block(const KernelModel& kernel,
                                               const PointSet& points,
                                               const Ordering& ordering,
                                               const int* pos_begin, int m) {
  // gather the block's coordinates contiguously so the m^2 kernel loop
  // works on unit-stride columns instead of strided rows of coords
  const int d = points.dim();
  Eigen::MatrixXd local(d, m);
  for (int a = 0; a < m; ++a)
    local.col(a) = points.coords.row(ordering.perm[pos_begin[a]]).transpose();
  Eigen::MatrixXd block(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b <= a; ++b) {
      const double v = kernel.evaluate(local.col(a), local.col(b));
      block(a, b) = v;
      block(b, a) = v;
    }
  return block;
}

inline void apply_jitter(Eigen::MatrixXd& block, double jitter) {
  const double shift = jitter * block.diagonal().mean();
  block.diagonal().array() += shift;
}

// Upper-triangular U with B = U U^T via Cholesky of the index-reversed
// block; returns the reversed matrix's lower factor C, with U = P C P.
inline Eigen::MatrixXd reverse_cholesky_lower(const Eigen::MatrixXd& block) {
  const auto m = block.rows();
  Eigen::MatrixXd rev = block.reverse();  // both dimensions
  Eigen::LLT<Eigen::MatrixXd> llt(rev);
  if (llt.info() != Eigen::Success)
    throw CholeskyBreakdown("reverse Cholesky: block is not positive definite");
  (void)m;
  return llt.matrixL();
}

// x = U^{-T} e_p with U = P C P; x has support on indices >= p.
inline Eigen::VectorXd reverse_cholesky_unit_solve(const Eigen::MatrixXd& chol_lower,
                                                   int p) {
  const auto m = chol_lower.rows();
  Eigen::VectorXd z = Eigen::VectorXd::Unit(m, m - 1 - p);
  chol_lower.transpose().triangularView<Eigen::Upper>().solveInPlace(z);
  return z.reverse();
}

}  // namespace detail

/// Column-by-column KL minimization on a plain pattern (each column is
/// an independent dense solve). jitter > 0 retries a failed block once
/// with jitter * mean(diag) added to the diagonal.
inline SparseFactor factorize_plain(const KernelModel& kernel, const PointSet& points,
                                    const Ordering& ordering, const SparsityPattern& pattern,
                                    double jitter = 0.0) {
  detail::SequentialEigenGuard seq_eigen;
  const int n = pattern.cols();
  SparseFactor factor;
  factor.pattern = pattern;
  // the factor only needs the permutation and lengthscales; skip the
  // candidate lists, whose deep copy is one allocation per point
  factor.ordering.perm = ordering.perm;
  factor.ordering.inv_perm = ordering.inv_perm;
  factor.ordering.lengthscales = ordering.lengthscales;
  factor.values.assign(pattern.nnz(), 0.0);

  int failed_column = -1;
#pragma omp parallel for schedule(dynamic, 16)
  for (int k = 0; k < n; ++k) {
    const int m = pattern.col_size(k);
    Eigen::MatrixXd block =
        detail::assemble_position_block(kernel, points, ordering, pattern.col_begin(k), m);
    Eigen::VectorXd col;
    try {
      col = kl_column(block);
    } catch (const CholeskyBreakdown&) {
      if (jitter > 0.0) {
        detail::apply_jitter(block, jitter);
        try {
          col = kl_column(block);
        } catch (const CholeskyBreakdown&) {
#pragma omp critical
          failed_column = k;
          continue;
        }
      } else {
#pragma omp critical
        failed_column = k;
        continue;
      }
    }
    for (int a = 0; a < m; ++a) factor.values[pattern.col_ptr[k] + a] = col[a];
  }
  if (failed_column >= 0)
    throw CholeskyBreakdown("factorize_plain: Cholesky breakdown in column " +
                            std::to_string(failed_column + 1));
  return factor;
}

/// Supernodal KL minimization: one reverse-ordered Cholesky per
/// supernode, reused for all parent columns. The resulting pattern is
/// the aggregated pattern (a superset of the plain one).
inline SparseFactor factorize_aggregated(const KernelModel& kernel, const PointSet& points,
                                         const Ordering& ordering,
                                         const SupernodePartition& partition,
                                         double jitter = 0.0) {
  detail::SequentialEigenGuard seq_eigen;
  SparsityPattern pattern = aggregated_pattern(partition);
  SparseFactor factor;
  factor.pattern = pattern;
  // the factor only needs the permutation and lengthscales; skip the
  // candidate lists, whose deep copy is one allocation per point
  factor.ordering.perm = ordering.perm;
  factor.ordering.inv_perm = ordering.inv_perm;
  factor.ordering.lengthscales = ordering.lengthscales;
  factor.values.assign(pattern.nnz(), 0.0);

  const int n_super = partition.size();
  int failed_supernode = -1;
#pragma omp parallel for schedule(dynamic, 4)
  for (int s = 0; s < n_super; ++s) {
    const auto& sn = partition.supernodes[s];
    const int m = static_cast<int>(sn.children.size());
    Eigen::MatrixXd block =
        detail::assemble_position_block(kernel, points, ordering, sn.children.data(), m);
    Eigen::MatrixXd chol_lower;
    try {
      chol_lower = detail::reverse_cholesky_lower(block);
    } catch (const CholeskyBreakdown&) {
      if (jitter > 0.0) {
        detail::apply_jitter(block, jitter);
        try {
          chol_lower = detail::reverse_cholesky_lower(block);
        } catch (const CholeskyBreakdown&) {
#pragma omp critical
          failed_supernode = s;
          continue;
        }
      } else {
#pragma omp critical
        failed_supernode = s;
        continue;
      }
    }
    for (int k : sn.parents) {
      const int p = static_cast<int>(
          std::lower_bound(sn.children.begin(), sn.children.end(), k) - sn.children.begin());
      Eigen::VectorXd x = detail::reverse_cholesky_unit_solve(chol_lower, p);
      for (int a = 0; a < m - p; ++a)
        factor.values[pattern.col_ptr[k] + a] = x[p + a];
    }
  }
  if (failed_supernode >= 0)
    throw CholeskyBreakdown("factorize_aggregated: Cholesky breakdown in supernode " +
                            std::to_string(failed_supernode + 1));
  return factor;
}

/// 0.5 * (trace(inv(T2) T1) + logdet T2 - logdet T1 - N)
inline double kl_divergence_dense(const Eigen::MatrixXd& theta1,
                                  const Eigen::MatrixXd& theta2) {
  detail::SequentialEigenGuard seq_eigen;
  if (theta1.rows() != theta2.rows())
    throw std::invalid_argument("kl_divergence_dense: size mismatch");
  const auto n = theta1.rows();
  Eigen::LLT<Eigen::MatrixXd> llt1(theta1), llt2(theta2);
  if (llt1.info() != Eigen::Success || llt2.info() != Eigen::Success)
    throw CholeskyBreakdown("kl_divergence_dense: input is not positive definite");
  const double logdet1 = 2.0 * Eigen::MatrixXd(llt1.matrixL()).diagonal().array().log().sum();
  const double logdet2 = 2.0 * Eigen::MatrixXd(llt2.matrixL()).diagonal().array().log().sum();
  const double tr = llt2.solve(theta1).trace();
  return 0.5 * (tr + logdet2 - logdet1 - static_cast<double>(n));
}

namespace detail {

// Per-column expansion sum_k (L_sk' Theta_sk L_sk - 2 log L_kk) of the
// KL objective; theta_pos is already in position order.
inline double kl_objective_column_sum(const SparseFactor& factor,
                                      const Eigen::MatrixXd& theta_pos) {
  double acc = 0.0;
  const auto& pat = factor.pattern;
  for (int k = 0; k < factor.size(); ++k) {
    const int m = pat.col_size(k);
    const int* rows = pat.col_begin(k);
    const double* vals = factor.values.data() + pat.col_ptr[k];
    double quad = 0.0;
    for (int a = 0; a < m; ++a) {
      double inner = 0.0;
      for (int b = 0; b < m; ++b) inner += theta_pos(rows[a], rows[b]) * vals[b];
      quad += vals[a] * inner;
    }
    acc += quad - 2.0 * std::log(vals[0]);
  }
  return acc;
}

}  // namespace detail

/// KL divergence from N(0, Theta) to the factor's implied Gaussian,
/// computed both by the per-column expansion and by the dense formula;
/// the two routes must agree. theta is over original indices.
inline double kl_objective(const SparseFactor& factor, const Eigen::MatrixXd& theta) {
  detail::SequentialEigenGuard seq_eigen;
  const int n = factor.size();
  if (theta.rows() != n) throw std::invalid_argument("kl_objective: size mismatch");

  Eigen::MatrixXd theta_pos(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      theta_pos(a, b) = theta(factor.ordering.perm[a], factor.ordering.perm[b]);

  Eigen::LLT<Eigen::MatrixXd> llt(theta_pos);
  if (llt.info() != Eigen::Success)
    throw CholeskyBreakdown("kl_objective: theta is not positive definite");
  const double logdet_theta =
      2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();

  const double via_columns =
      0.5 * (detail::kl_objective_column_sum(factor, theta_pos) - logdet_theta -
             static_cast<double>(n));

  // independent dense route: trace(L' Theta L) and logdet(L L')
  Eigen::MatrixXd ldense = factor.to_dense();
  const double tr = (ldense.transpose() * theta_pos * ldense).trace();
  const double logdet_llt = 2.0 * ldense.diagonal().array().log().sum();
  const double via_dense =
      0.5 * (tr - logdet_llt - logdet_theta - static_cast<double>(n));

  const double scale = std::max(
      {1.0, std::abs(via_columns), std::abs(via_dense), std::abs(tr), std::abs(logdet_theta)});
  if (std::abs(via_columns - via_dense) > 1e-8 * scale)
    throw std::runtime_error("kl_objective: route disagreement");
  return std::max(via_columns, 0.0);
}

/// Gaussian log-likelihood of observations y (original index order)
/// under the approximated covariance: -0.5 (||L'y||^2 - 2 sum log L_kk
/// + N log 2pi).
inline double log_likelihood(const SparseFactor& factor, const Eigen::VectorXd& y) {
  const int n = factor.size();
  if (y.size() != n) throw std::invalid_argument("log_likelihood: size mismatch");
  Eigen::VectorXd y_pos(n);
  for (int k = 0; k < n; ++k) y_pos[k] = y[factor.ordering.perm[k]];
  const double quad = factor.multiply_transpose(y_pos).squaredNorm();
  return -0.5 * (quad - 2.0 * factor.sum_log_diag() + n * std::log(2.0 * M_PI));
}

}  // namespace klchol
