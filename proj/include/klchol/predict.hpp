#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "klchol/factor.hpp"
#include "klchol/kernel.hpp"
#include "klchol/ordering.hpp"
#include "klchol/sparsity.hpp"

namespace klchol {

struct PredictionResult {
  Eigen::VectorXd mean;          // original prediction index order
  Eigen::MatrixXd covariance;    // full Pr x Pr (first / streaming modes)
  std::vector<std::vector<int>> batches;        // batched mode only
  std::vector<Eigen::MatrixXd> batch_covariance;
  std::vector<double> batch_ms;
  std::int64_t peak_bytes = 0;         // streaming mode instrumentation
  std::int64_t full_factor_bytes = 0;  // what the dropped factor would cost

  Eigen::VectorXd sd() const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(mean.size());
    if (covariance.rows() == mean.size()) {
      out = covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    } else {
      for (std::size_t b = 0; b < batches.size(); ++b)
        for (std::size_t a = 0; a < batches[b].size(); ++a)
          out[batches[b][a]] =
              std::sqrt(std::max(batch_covariance[b](a, a), 0.0));
    }
    return out;
  }
};

/// Joint factorization with the prediction block ordered first. Holds
/// the dense Pr x Pr triangular block so that means for many
/// observation vectors reuse one factorization.
struct PredictFirstModel {
  SparseFactor factor;  // joint, prediction positions 0..n_pr-1
  int n_pr = 0;
  int n_tr = 0;
  Eigen::MatrixXd l_prpr;  // dense lower block

  /// mean = -L_PrPr^{-T} L_TrPr^T y for each column of y (original
  /// training index order); rows of the result are original prediction
  /// indices.
  Eigen::MatrixXd mean_multi(const Eigen::MatrixXd& y) const {
  detail::SequentialEigenGuard seq_eigen;
    if (y.rows() != n_tr) throw std::invalid_argument("predict: observation size mismatch");
    const auto& pat = factor.pattern;
    const auto& perm = factor.ordering.perm;
    Eigen::MatrixXd y_pos(n_tr, y.cols());
    for (int k = 0; k < n_tr; ++k) y_pos.row(k) = y.row(perm[n_pr + k] - n_pr);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n_pr, y.cols());
    for (int k = 0; k < n_pr; ++k)
      for (int t = pat.col_ptr[k]; t < pat.col_ptr[k + 1]; ++t) {
        const int i = pat.row_idx[t];
        if (i >= n_pr) w.row(k) += factor.values[t] * y_pos.row(i - n_pr);
      }
    l_prpr.transpose().triangularView<Eigen::Upper>().solveInPlace(w);
    Eigen::MatrixXd mean(n_pr, y.cols());
    for (int k = 0; k < n_pr; ++k) mean.row(perm[k]) = -w.row(k);
    return mean;
  }

  Eigen::VectorXd mean(const Eigen::VectorXd& y) const { return mean_multi(y); }

  /// covariance = L_PrPr^{-T} L_PrPr^{-1}, original prediction order.
  Eigen::MatrixXd covariance() const {
  detail::SequentialEigenGuard seq_eigen;
    Eigen::MatrixXd x = Eigen::MatrixXd::Identity(n_pr, n_pr);
    l_prpr.triangularView<Eigen::Lower>().solveInPlace(x);
    Eigen::MatrixXd cov_pos = x.transpose() * x;
    const auto& perm = factor.ordering.perm;
    Eigen::MatrixXd cov(n_pr, n_pr);
    for (int a = 0; a < n_pr; ++a)
      for (int b = 0; b < n_pr; ++b) cov(perm[a], perm[b]) = cov_pos(a, b);
    return cov;
  }
};

inline PredictFirstModel build_predict_first(const KernelModel& kernel, const PointSet& train,
                                             const PointSet& pred, double rho, double lambda,
                                             double jitter = 0.0) {
  detail::SequentialEigenGuard seq_eigen;
  PredictFirstModel model;
  model.n_pr = pred.size();
  model.n_tr = train.size();
  Ordering ordering = joint_ordering_prediction_first(train, pred);
  PointSet points = joint_points(train, pred);
  SparsityPattern pattern = build_pattern(ordering, points, rho);
  SupernodePartition partition = aggregate_supernodes(pattern, ordering, lambda);
  model.factor = factorize_aggregated(kernel, points, ordering, partition, jitter);

  model.l_prpr = Eigen::MatrixXd::Zero(model.n_pr, model.n_pr);
  const auto& pat = model.factor.pattern;
  for (int k = 0; k < model.n_pr; ++k)
    for (int t = pat.col_ptr[k]; t < pat.col_ptr[k + 1]; ++t)
      if (pat.row_idx[t] < model.n_pr)
        model.l_prpr(pat.row_idx[t], k) = model.factor.values[t];
  return model;
}

inline PredictionResult predict_first(const KernelModel& kernel, const PointSet& train,
                                      const PointSet& pred, const Eigen::VectorXd& y,
                                      double rho, double lambda, double jitter = 0.0) {
  PredictFirstModel model = build_predict_first(kernel, train, pred, rho, lambda, jitter);
  PredictionResult out;
  out.mean = model.mean(y);
  out.covariance = model.covariance();
  return out;
}

namespace detail {

// x solving U x = rhs with U = P C P (C lower triangular): reverse,
// solve, reverse back. Overload pair for vectors and matrices.
inline Eigen::MatrixXd reverse_upper_solve(const Eigen::MatrixXd& chol_lower,
                                           Eigen::MatrixXd rhs) {
  rhs.colwise().reverseInPlace();
  chol_lower.triangularView<Eigen::Lower>().solveInPlace(rhs);
  rhs.colwise().reverseInPlace();
  return rhs;
}

}  // namespace detail

/// Batched prediction with the training-only factorization reused
/// across batches via rank-one Sherman-Morrison-Woodbury updates. Each
/// batch is a list of original prediction indices; batches must
/// partition {0..N_Pr-1}.
inline PredictionResult predict_last_batched(const KernelModel& kernel, const PointSet& train,
                                             const PointSet& pred, const Eigen::VectorXd& y,
                                             double rho, double lambda,
                                             const std::vector<std::vector<int>>& batches,
                                             double jitter = 0.0) {
  detail::SequentialEigenGuard seq_eigen;
  const int n_tr = train.size();
  const int n_pr = pred.size();
  if (y.size() != n_tr) throw std::invalid_argument("predict: observation size mismatch");
  {
    std::vector<char> seen(n_pr, 0);
    for (const auto& b : batches)
      for (int i : b) {
        if (i < 0 || i >= n_pr || seen[i])
          throw std::invalid_argument("predict: batches must partition the prediction set");
        seen[i] = 1;
      }
    for (char s : seen)
      if (!s) throw std::invalid_argument("predict: batches must partition the prediction set");
  }

  Ordering ordering = reverse_maximin(train);
  SparsityPattern pattern = build_pattern(ordering, train, rho);
  SupernodePartition partition = aggregate_supernodes(pattern, ordering, lambda);
  const int n_super = partition.size();

  Eigen::VectorXd y_pos(n_tr);
  for (int k = 0; k < n_tr; ++k) y_pos[k] = y[ordering.perm[k]];

  // per supernode: reverse Cholesky of Theta_{children,children} and
  // y~ = U^{-1} y_{children}; both batch independent
  std::vector<Eigen::MatrixXd> chol(n_super);
  std::vector<Eigen::VectorXd> y_tilde(n_super);
  std::string error;
#pragma omp parallel for schedule(dynamic, 4)
  for (int s = 0; s < n_super; ++s) {
    try {
      const auto& sn = partition.supernodes[s];
      const int m = static_cast<int>(sn.children.size());
      Eigen::MatrixXd block =
          detail::assemble_position_block(kernel, train, ordering, sn.children.data(), m);
      try {
        chol[s] = detail::reverse_cholesky_lower(block);
      } catch (const CholeskyBreakdown&) {
        if (jitter <= 0.0) throw;
        detail::apply_jitter(block, jitter);
        chol[s] = detail::reverse_cholesky_lower(block);
      }
      Eigen::VectorXd ys(m);
      for (int a = 0; a < m; ++a) ys[a] = y_pos[sn.children[a]];
      y_tilde[s] = detail::reverse_upper_solve(chol[s], ys);
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw CholeskyBreakdown(error);

  PredictionResult out;
  out.mean.resize(n_pr);
  out.batches = batches;
  out.batch_covariance.resize(batches.size());
  out.batch_ms.assign(batches.size(), 0.0);

#pragma omp parallel for schedule(dynamic)
  for (int b = 0; b < static_cast<int>(batches.size()); ++b) {
   try {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& idx = batches[b];
    const int nb = static_cast<int>(idx.size());
    Eigen::MatrixXd theta_bb(nb, nb);
    for (int a = 0; a < nb; ++a)
      for (int c = 0; c <= a; ++c) {
        const double v = kernel.evaluate(pred, idx[a], idx[c]);
        theta_bb(a, c) = v;
        theta_bb(c, a) = v;
      }
    Eigen::LLT<Eigen::MatrixXd> bb_llt(theta_bb);
    if (bb_llt.info() != Eigen::Success)
      throw CholeskyBreakdown("predict_last: batch " + std::to_string(b + 1) +
                              " prior block is not positive definite");
    Eigen::MatrixXd p_acc = bb_llt.solve(Eigen::MatrixXd::Identity(nb, nb));
    Eigen::VectorXd m_acc = Eigen::VectorXd::Zero(nb);

    for (int s = 0; s < n_super; ++s) {
      const auto& sn = partition.supernodes[s];
      const int m = static_cast<int>(sn.children.size());
      Eigen::MatrixXd theta_sb(m, nb);
      for (int a = 0; a < m; ++a) {
        const int oa = ordering.perm[sn.children[a]];
        for (int c = 0; c < nb; ++c)
          theta_sb(a, c) = kernel.evaluate(train.coords.row(oa).transpose(),
                                           pred.coords.row(idx[c]).transpose());
      }
      Eigen::MatrixXd big_b = detail::reverse_upper_solve(chol[s], theta_sb);

      for (int k : sn.parents) {
        const int p = static_cast<int>(
            std::lower_bound(sn.children.begin(), sn.children.end(), k) - sn.children.begin());
        const auto bs = big_b.bottomRows(m - p);
        const auto ys = y_tilde[s].tail(m - p);
        Eigen::MatrixXd schur = theta_bb - bs.transpose() * bs;
        Eigen::LLT<Eigen::MatrixXd> schur_llt(schur);
        if (schur_llt.info() != Eigen::Success)
          throw CholeskyBreakdown("predict_last: singular update block in batch " +
                                  std::to_string(b + 1) + ", column " + std::to_string(k + 1));
        Eigen::VectorXd v = bs * schur_llt.solve(bs.row(0).transpose());
        const double c = std::sqrt(1.0 + v[0]);
        Eigen::VectorXd w = v;
        w[0] += 1.0;
        Eigen::VectorXd lbar = -(1.0 / c) * bb_llt.solve(bs.transpose() * w);
        p_acc.noalias() += lbar * lbar.transpose();
        m_acc.noalias() += lbar * ((1.0 / c) * ys.dot(w));
      }
    }

    Eigen::LLT<Eigen::MatrixXd> p_llt(p_acc);
    if (p_llt.info() != Eigen::Success)
      throw CholeskyBreakdown("predict_last: posterior precision of batch " +
                              std::to_string(b + 1) + " is not positive definite");
    out.batch_covariance[b] = p_llt.solve(Eigen::MatrixXd::Identity(nb, nb));
    Eigen::VectorXd mu = -p_llt.solve(m_acc);
    for (int a = 0; a < nb; ++a) out.mean[idx[a]] = mu[a];
    out.batch_ms[b] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
   } catch (const std::exception& e) {
#pragma omp critical
    if (error.empty()) error = e.what();
   }
  }
  if (!error.empty()) throw CholeskyBreakdown(error);
  return out;
}

inline std::vector<std::vector<int>> singleton_batches(int n_pr) {
  std::vector<std::vector<int>> batches(n_pr);
  for (int i = 0; i < n_pr; ++i) batches[i] = {i};
  return batches;
}

/// Low-memory prediction: the training-only factor is produced one
/// supernode at a time and folded into B = L^T Theta_TrPr and u = L^T y
/// without ever being stored. mean = B^T u, covariance =
/// Theta_PrPr - B^T B. peak_bytes tracks the transient per-supernode
/// storage against the cost of keeping the whole factor.
inline PredictionResult predict_streaming(const KernelModel& kernel, const PointSet& train,
                                          const PointSet& pred, const Eigen::VectorXd& y,
                                          double rho, double lambda, double jitter = 0.0) {
  detail::SequentialEigenGuard seq_eigen;
  const int n_tr = train.size();
  const int n_pr = pred.size();
  if (y.size() != n_tr) throw std::invalid_argument("predict: observation size mismatch");

  Ordering ordering = reverse_maximin(train);
  SparsityPattern pattern = build_pattern(ordering, train, rho);
  SupernodePartition partition = aggregate_supernodes(pattern, ordering, lambda);
  const int n_super = partition.size();

  Eigen::VectorXd y_pos(n_tr);
  for (int k = 0; k < n_tr; ++k) y_pos[k] = y[ordering.perm[k]];

  Eigen::MatrixXd big_b = Eigen::MatrixXd::Zero(n_tr, n_pr);  // rows: positions k
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n_tr);            // (L^T y)_k
  std::int64_t peak = 0;
  std::string error;

#pragma omp parallel
  {
    std::int64_t local_peak = 0;
#pragma omp for schedule(dynamic, 4)
    for (int s = 0; s < n_super; ++s) {
     try {
      const auto& sn = partition.supernodes[s];
      const int m = static_cast<int>(sn.children.size());
      Eigen::MatrixXd block =
          detail::assemble_position_block(kernel, train, ordering, sn.children.data(), m);
      Eigen::MatrixXd chol_lower;
      try {
        chol_lower = detail::reverse_cholesky_lower(block);
      } catch (const CholeskyBreakdown&) {
        if (jitter <= 0.0) throw;
        detail::apply_jitter(block, jitter);
        chol_lower = detail::reverse_cholesky_lower(block);
      }
      Eigen::MatrixXd theta_sp(m, n_pr);
      for (int a = 0; a < m; ++a) {
        const int oa = ordering.perm[sn.children[a]];
        for (int c = 0; c < n_pr; ++c)
          theta_sp(a, c) = kernel.evaluate(train.coords.row(oa).transpose(),
                                           pred.coords.row(c).transpose());
      }
      const std::int64_t here =
          static_cast<std::int64_t>(sizeof(double)) *
          (2 * static_cast<std::int64_t>(m) * m + static_cast<std::int64_t>(m) * (n_pr + 1));
      local_peak = std::max(local_peak, here);

      for (int k : sn.parents) {
        const int p = static_cast<int>(
            std::lower_bound(sn.children.begin(), sn.children.end(), k) - sn.children.begin());
        Eigen::VectorXd col = detail::reverse_cholesky_unit_solve(chol_lower, p);
        double uk = 0.0;
        Eigen::RowVectorXd bk = Eigen::RowVectorXd::Zero(n_pr);
        for (int a = p; a < m; ++a) {
          uk += col[a] * y_pos[sn.children[a]];
          bk += col[a] * theta_sp.row(a);
        }
        u[k] = uk;          // disjoint rows across supernodes
        big_b.row(k) = bk;
      }
     } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
     }
    }
#pragma omp critical
    peak = std::max(peak, local_peak);
  }
  if (!error.empty()) throw CholeskyBreakdown(error);

  Eigen::MatrixXd theta_pp(n_pr, n_pr);
  for (int a = 0; a < n_pr; ++a)
    for (int c = 0; c <= a; ++c) {
      const double v = kernel.evaluate(pred, a, c);
      theta_pp(a, c) = v;
      theta_pp(c, a) = v;
    }

  PredictionResult out;
  out.mean = big_b.transpose() * u;
  out.covariance = theta_pp - big_b.transpose() * big_b;
  out.peak_bytes = peak;
  out.full_factor_bytes = static_cast<std::int64_t>(pattern.nnz()) * sizeof(double);
  return out;
}

/// In-memory reference for predict_streaming: same formulas computed
/// from a stored training-only factor.
inline PredictionResult predict_streaming_reference(const KernelModel& kernel,
                                                    const PointSet& train, const PointSet& pred,
                                                    const Eigen::VectorXd& y, double rho,
                                                    double lambda, double jitter = 0.0) {
  detail::SequentialEigenGuard seq_eigen;
  const int n_tr = train.size();
  const int n_pr = pred.size();
  Ordering ordering = reverse_maximin(train);
  SparsityPattern pattern = build_pattern(ordering, train, rho);
  SupernodePartition partition = aggregate_supernodes(pattern, ordering, lambda);
  SparseFactor factor = factorize_aggregated(kernel, train, ordering, partition, jitter);

  Eigen::VectorXd y_pos(n_tr);
  for (int k = 0; k < n_tr; ++k) y_pos[k] = y[ordering.perm[k]];
  Eigen::MatrixXd theta_tp(n_tr, n_pr);
  for (int k = 0; k < n_tr; ++k)
    for (int c = 0; c < n_pr; ++c)
      theta_tp(k, c) = kernel.evaluate(train.coords.row(ordering.perm[k]).transpose(),
                                       pred.coords.row(c).transpose());
  Eigen::MatrixXd big_b(n_tr, n_pr);
  Eigen::VectorXd u(n_tr);
  const auto& pat = factor.pattern;
  for (int k = 0; k < n_tr; ++k) {
    double uk = 0.0;
    Eigen::RowVectorXd bk = Eigen::RowVectorXd::Zero(n_pr);
    for (int t = pat.col_ptr[k]; t < pat.col_ptr[k + 1]; ++t) {
      const int i = pat.row_idx[t];
      uk += factor.values[t] * y_pos[i];
      bk += factor.values[t] * theta_tp.row(i);
    }
    u[k] = uk;
    big_b.row(k) = bk;
  }
  Eigen::MatrixXd theta_pp(n_pr, n_pr);
  for (int a = 0; a < n_pr; ++a)
    for (int c = 0; c < n_pr; ++c) theta_pp(a, c) = kernel.evaluate(pred, a, c);

  PredictionResult out;
  out.mean = big_b.transpose() * u;
  out.covariance = theta_pp - big_b.transpose() * big_b;
  out.full_factor_bytes = static_cast<std::int64_t>(pattern.nnz()) * sizeof(double);
  return out;
}

}  // namespace klchol
