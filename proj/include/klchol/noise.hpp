#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "klchol/factor.hpp"
#include "klchol/sparsity.hpp"

namespace klchol {

enum class PreconPattern { pattern_of_L, pattern_of_LLT, exact };

inline PreconPattern precon_pattern_from_string(const std::string& s) {
  if (s == "L") return PreconPattern::pattern_of_L;
  if (s == "LLT") return PreconPattern::pattern_of_LLT;
  if (s == "exact") return PreconPattern::exact;
  throw std::invalid_argument("unknown preconditioner pattern: " + s);
}

/// Zero fill-in incomplete Cholesky on a fixed lower pattern. Values in
/// a_values align with the pattern (diagonal first per column). Updates
/// outside the pattern are dropped, so A - L~ L~^T vanishes exactly on
/// the pattern.
inline std::vector<double> ichol(const SparsityPattern& pattern,
                                 std::vector<double> a_values) {
  const int n = pattern.cols();
  if (static_cast<std::int64_t>(a_values.size()) != pattern.nnz())
    throw std::invalid_argument("ichol: value count does not match pattern");
  std::vector<double>& v = a_values;
  for (int j = 0; j < n; ++j) {
    const int jb = pattern.col_ptr[j], je = pattern.col_ptr[j + 1];
    const double pivot = v[jb];
    if (pivot <= 0.0)
      throw CholeskyBreakdown("ichol: nonpositive pivot in column " + std::to_string(j + 1));
    const double d = std::sqrt(pivot);
    v[jb] = d;
    for (int p = jb + 1; p < je; ++p) v[p] /= d;
    // right-looking rank-1 update restricted to the pattern
    for (int p = jb + 1; p < je; ++p) {
      const int i = pattern.row_idx[p];
      const int ib = pattern.col_ptr[i], ie = pattern.col_ptr[i + 1];
      for (int q = p; q < je; ++q) {
        const int r = pattern.row_idx[q];
        const int* lo = std::lower_bound(pattern.row_idx.data() + ib,
                                         pattern.row_idx.data() + ie, r);
        if (lo != pattern.row_idx.data() + ie && *lo == r)
          v[lo - pattern.row_idx.data()] -= v[q] * v[p];
      }
    }
  }
  return a_values;
}

/// Split-preconditioned factorization of Sigma = Theta + R with diagonal
/// noise R. Everything is stored in elimination-position space; the
/// factor's ordering maps back to original indices.
struct NoisyModel {
  SparseFactor factor;
  Eigen::VectorXd noise_diag;  // original index order
  Eigen::VectorXd r_pos;       // position order
  PreconPattern precon_pattern = PreconPattern::pattern_of_L;
  SparsityPattern precon;         // pattern of L~
  std::vector<double> precon_values;
  bool logdet_exact = false;

  int size() const { return factor.size(); }

  double precon_sum_log_diag() const {
    double s = 0.0;
    for (int k = 0; k < precon.cols(); ++k)
      s += std::log(precon_values[precon.col_ptr[k]]);
    return s;
  }

  /// w = M v with M = R^{-1} + L L^T, in position space.
  Eigen::VectorXd apply_m(const Eigen::VectorXd& v) const {
    Eigen::VectorXd w = factor.multiply(factor.multiply_transpose(v));
    w.array() += v.array() / r_pos.array();
    return w;
  }

  /// z = (L~ L~^T)^{-1} r by forward and backward substitution.
  Eigen::VectorXd apply_precon_inverse(const Eigen::VectorXd& r) const {
    const int n = precon.cols();
    Eigen::VectorXd z = r;
    for (int j = 0; j < n; ++j) {
      const int b = precon.col_ptr[j], e = precon.col_ptr[j + 1];
      z[j] /= precon_values[b];
      for (int p = b + 1; p < e; ++p) z[precon.row_idx[p]] -= precon_values[p] * z[j];
    }
    for (int j = n - 1; j >= 0; --j) {
      const int b = precon.col_ptr[j], e = precon.col_ptr[j + 1];
      double s = z[j];
      for (int p = b + 1; p < e; ++p) s -= precon_values[p] * z[precon.row_idx[p]];
      z[j] = s / precon_values[b];
    }
    return z;
  }
};

namespace detail {

// Row-major (CSR) view of a CSC pattern with values, used to form
// entries of L L^T as sparse row dot products.
struct RowView {
  std::vector<int> row_ptr;
  std::vector<int> col_idx;
  std::vector<double> vals;

  RowView(const SparsityPattern& pattern, const std::vector<double>& values) {
    const int n = pattern.cols();
    row_ptr.assign(n + 1, 0);
    for (int idx : pattern.row_idx) row_ptr[idx + 1]++;
    for (int i = 0; i < n; ++i) row_ptr[i + 1] += row_ptr[i];
    col_idx.resize(pattern.nnz());
    vals.resize(pattern.nnz());
    std::vector<int> next(row_ptr.begin(), row_ptr.end() - 1);
    for (int k = 0; k < n; ++k)
      for (int t = pattern.col_ptr[k]; t < pattern.col_ptr[k + 1]; ++t) {
        const int i = pattern.row_idx[t];
        col_idx[next[i]] = k;
        vals[next[i]] = values[t];
        ++next[i];
      }
    // columns within a row come out ascending because k sweeps ascending
  }

  double row_dot(int i, int j) const {
    double s = 0.0;
    int a = row_ptr[i], b = row_ptr[j];
    const int ae = row_ptr[i + 1], be = row_ptr[j + 1];
    while (a < ae && b < be) {
      if (col_idx[a] < col_idx[b]) ++a;
      else if (col_idx[a] > col_idx[b]) ++b;
      else { s += vals[a] * vals[b]; ++a; ++b; }
    }
    return s;
  }
};

inline SparsityPattern full_lower_pattern(int n) {
  std::vector<std::vector<int>> columns(n);
  for (int j = 0; j < n; ++j) {
    columns[j].resize(n - j);
    for (int i = j; i < n; ++i) columns[j][i - j] = i;
  }
  return SparsityPattern::from_columns(columns);
}

}  // namespace detail

/// Assemble A = L L^T restricted to the chosen pattern, add R^{-1} to
/// the diagonal, and factor it by zero fill-in incomplete Cholesky.
inline NoisyModel build_noisy_model(const SparseFactor& factor, const Eigen::VectorXd& noise_diag,
                                    PreconPattern precon_pattern = PreconPattern::pattern_of_L) {
  detail::SequentialEigenGuard seq_eigen;
  const int n = factor.size();
  if (noise_diag.size() != n)
    throw std::invalid_argument("build_noisy_model: noise size mismatch");
  if ((noise_diag.array() <= 0.0).any())
    throw std::invalid_argument("build_noisy_model: noise variances must be positive");

  NoisyModel model;
  model.factor = factor;
  model.noise_diag = noise_diag;
  model.r_pos.resize(n);
  for (int k = 0; k < n; ++k) model.r_pos[k] = noise_diag[factor.ordering.perm[k]];
  model.precon_pattern = precon_pattern;
  model.logdet_exact = precon_pattern == PreconPattern::exact;

  switch (precon_pattern) {
    case PreconPattern::pattern_of_L:
      model.precon = factor.pattern;
      break;
    case PreconPattern::pattern_of_LLT:
      model.precon = symbolic_square_lower(factor.pattern);
      break;
    case PreconPattern::exact:
      model.precon = detail::full_lower_pattern(n);
      break;
  }

  detail::RowView rows(factor.pattern, factor.values);
  std::vector<double> a(model.precon.nnz());
#pragma omp parallel for schedule(dynamic, 64)
  for (int j = 0; j < n; ++j)
    for (int t = model.precon.col_ptr[j]; t < model.precon.col_ptr[j + 1]; ++t) {
      const int i = model.precon.row_idx[t];
      double val = rows.row_dot(i, j);
      if (i == j) val += 1.0 / model.r_pos[j];
      a[t] = val;
    }

  model.precon_values = ichol(model.precon, std::move(a));
  return model;
}

struct SolveStats {
  int iterations = 0;
  double final_residual = 0.0;
};

namespace detail {

// PCG on M z = b in position space; the preconditioned residual norm
// sqrt(r' P^{-1} r) drives the stopping test.
inline Eigen::VectorXd pcg_m(const NoisyModel& model, const Eigen::VectorXd& b, double tol,
                             int max_iter, bool use_precon, SolveStats* stats) {
  const int n = model.size();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd r = b;
  auto precond = [&](const Eigen::VectorXd& v) {
    return use_precon ? model.apply_precon_inverse(v) : v;
  };
  Eigen::VectorXd z = precond(r);
  double rz = r.dot(z);
  const double target = tol * std::sqrt(std::max(rz, 0.0));
  if (stats) { stats->iterations = 0; stats->final_residual = std::sqrt(std::max(rz, 0.0)); }
  if (rz <= 0.0 || target == 0.0) return x;

  Eigen::VectorXd p = z;
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd mp = model.apply_m(p);
    const double alpha = rz / p.dot(mp);
    x += alpha * p;
    r -= alpha * mp;
    z = precond(r);
    const double rz_new = r.dot(z);
    const double res = std::sqrt(std::max(rz_new, 0.0));
    if (stats) { stats->iterations = it; stats->final_residual = res; }
    if (res <= target) return x;
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  throw std::runtime_error("solve_sigma: PCG did not converge, residual " +
                           std::to_string(stats ? stats->final_residual : -1.0));
}

}  // namespace detail

/// x = Sigma^{-1} v with Sigma = Theta_hat + R, computed as
/// R^{-1} M^{-1} (L L^T v) with M = R^{-1} + L L^T. v and the result are
/// in original index order.
inline Eigen::VectorXd solve_sigma(const NoisyModel& model, const Eigen::VectorXd& v,
                                   double tol = 1e-8, int max_iter = 50,
                                   SolveStats* stats = nullptr, bool use_precon = true) {
  const int n = model.size();
  if (v.size() != n) throw std::invalid_argument("solve_sigma: size mismatch");
  if (tol <= 0.0) throw std::invalid_argument("solve_sigma: tol must be positive");
  const auto& perm = model.factor.ordering.perm;
  Eigen::VectorXd v_pos(n);
  for (int k = 0; k < n; ++k) v_pos[k] = v[perm[k]];
  Eigen::VectorXd rhs = model.factor.multiply(model.factor.multiply_transpose(v_pos));
  Eigen::VectorXd z = detail::pcg_m(model, rhs, tol, max_iter, use_precon, stats);
  z.array() /= model.r_pos.array();
  Eigen::VectorXd out(n);
  for (int k = 0; k < n; ++k) out[perm[k]] = z[k];
  return out;
}

/// logdet Sigma = -2 sum log L_kk + 2 sum log L~_kk + sum log R_kk;
/// exact when the preconditioner pattern is the full lower triangle.
inline double noisy_log_det(const NoisyModel& model) {
  return -2.0 * model.factor.sum_log_diag() + 2.0 * model.precon_sum_log_diag() +
         model.r_pos.array().log().sum();
}

inline double noisy_log_likelihood(const NoisyModel& model, const Eigen::VectorXd& y,
                                   double tol = 1e-8, int max_iter = 50,
                                   SolveStats* stats = nullptr) {
  const int n = model.size();
  if (y.size() != n) throw std::invalid_argument("noisy_log_likelihood: size mismatch");
  const double quad = y.dot(solve_sigma(model, y, tol, max_iter, stats));
  return -0.5 * (quad + noisy_log_det(model) + n * std::log(2.0 * M_PI));
}

/// Dense Sigma_hat = (L L^T)^{-1} L~ L~^T R in original index order;
/// test and diagnostics helper.
inline Eigen::MatrixXd implied_sigma_dense(const NoisyModel& model) {
  detail::SequentialEigenGuard seq_eigen;
  const int n = model.size();
  Eigen::MatrixXd l = model.factor.to_dense();
  Eigen::MatrixXd lt = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k)
    for (int t = model.precon.col_ptr[k]; t < model.precon.col_ptr[k + 1]; ++t)
      lt(model.precon.row_idx[t], k) = model.precon_values[t];
  Eigen::MatrixXd llt = l * l.transpose();
  Eigen::MatrixXd sigma_pos =
      llt.ldlt().solve(lt * lt.transpose() * model.r_pos.asDiagonal());
  // the product is symmetric only for the exact preconditioner; return
  // the symmetric part so the result is usable as a covariance
  sigma_pos = 0.5 * (sigma_pos + sigma_pos.transpose()).eval();
  Eigen::MatrixXd out(n, n);
  const auto& perm = model.factor.ordering.perm;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) out(perm[a], perm[b]) = sigma_pos(a, b);
  return out;
}

}  // namespace klchol
