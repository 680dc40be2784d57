#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>

#include "klchol/factor.hpp"
#include "klchol/ordering.hpp"
#include "klchol/rng.hpp"

namespace klchol {

/// Dense reference quantities used by tests and --dense-check. All of
/// these are cubic in N and intended for desk-scale problems only.

/// Exact lower-triangular L (position space) with L L^T equal to the
/// inverse of the permuted theta. Matches the sparse factorization run
/// on a full lower-triangular pattern.
inline Eigen::MatrixXd dense_inverse_cholesky(const Eigen::MatrixXd& theta,
                                              const Ordering& ordering) {
  detail::SequentialEigenGuard seq_eigen;
  const int n = static_cast<int>(theta.rows());
  if (ordering.size() != n)
    throw std::invalid_argument("dense_inverse_cholesky: size mismatch");
  Eigen::MatrixXd theta_pos(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      theta_pos(a, b) = theta(ordering.perm[a], ordering.perm[b]);
  Eigen::MatrixXd c = detail::reverse_cholesky_lower(theta_pos);
  Eigen::MatrixXd u = c.reverse();  // upper triangular, theta_pos = u u^T
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(n, n);
  u.transpose().triangularView<Eigen::Lower>().solveInPlace(l);
  return l;  // l = u^{-T}
}

/// Textbook GP conditional: mean = Theta_PrTr Theta_TrTr^{-1} y,
/// covariance = Theta_PrPr - Theta_PrTr Theta_TrTr^{-1} Theta_TrPr.
struct DenseConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

inline DenseConditional dense_conditional(const Eigen::MatrixXd& theta_tt,
                                          const Eigen::MatrixXd& theta_tp,
                                          const Eigen::MatrixXd& theta_pp,
                                          const Eigen::VectorXd& y) {
  detail::SequentialEigenGuard seq_eigen;
  if (theta_tt.rows() != y.size() || theta_tt.rows() != theta_tp.rows() ||
      theta_tp.cols() != theta_pp.rows())
    throw std::invalid_argument("dense_conditional: block size mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(theta_tt);
  if (llt.info() != Eigen::Success)
    throw CholeskyBreakdown("dense_conditional: training block is not positive definite");
  DenseConditional out;
  out.mean = theta_tp.transpose() * llt.solve(y);
  out.covariance = theta_pp - theta_tp.transpose() * llt.solve(theta_tp);
  return out;
}

/// chol(theta) times a standard normal draw from the counter-based
/// generator; bitwise reproducible for a given seed.
inline Eigen::VectorXd dense_sample(const Eigen::MatrixXd& theta, std::uint64_t seed) {
  detail::SequentialEigenGuard seq_eigen;
  Eigen::LLT<Eigen::MatrixXd> llt(theta);
  if (llt.info() != Eigen::Success)
    throw CholeskyBreakdown("dense_sample: theta is not positive definite");
  SplitMix64 rng(seed);
  Eigen::VectorXd z(theta.rows());
  for (int i = 0; i < z.size(); ++i) z[i] = rng.next_normal();
  return Eigen::MatrixXd(llt.matrixL()) * z;
}

}  // namespace klchol
