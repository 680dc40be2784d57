#pragma once

#include <Eigen/Dense>

#include <vector>

#include "klchol/factor.hpp"
#include "klchol/kernel.hpp"
#include "klchol/ordering.hpp"
#include "klchol/predict.hpp"
#include "klchol/sparsity.hpp"

namespace testutil {

// Reference for batched prediction: for each batch, refactorize the
// joint problem with the batch ordered last. Training column k keeps
// its aggregated pattern plus all batch rows; batch columns are dense
// among themselves. Every column is the closed-form minimizer on the
// true joint covariance; the posterior is then read off the precision
// blocks.
inline klchol::PredictionResult naive_predict_last(
    const klchol::KernelModel& kernel, const klchol::PointSet& train,
    const klchol::PointSet& pred, const Eigen::VectorXd& y, double rho, double lambda,
    const std::vector<std::vector<int>>& batches) {
  using namespace klchol;
  const int n_tr = train.size();
  Ordering ordering = reverse_maximin(train);
  SparsityPattern pattern = build_pattern(ordering, train, rho);
  SupernodePartition partition = aggregate_supernodes(pattern, ordering, lambda);

  Eigen::VectorXd y_pos(n_tr);
  for (int k = 0; k < n_tr; ++k) y_pos[k] = y[ordering.perm[k]];

  PredictionResult out;
  out.mean.resize(pred.size());
  out.batches = batches;
  out.batch_covariance.resize(batches.size());

  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& idx = batches[b];
    const int nb = static_cast<int>(idx.size());
    const int n = n_tr + nb;

    // joint coordinates in position order: training positions then batch
    auto point_at = [&](int pos) -> Eigen::VectorXd {
      if (pos < n_tr) return train.coords.row(ordering.perm[pos]).transpose();
      return pred.coords.row(idx[pos - n_tr]).transpose();
    };
    Eigen::MatrixXd theta(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        const double v = kernel.evaluate(point_at(i), point_at(j));
        theta(i, j) = v;
        theta(j, i) = v;
      }

    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    for (int k = 0; k < n; ++k) {
      std::vector<int> rows;
      if (k < n_tr) {
        rows = implied_column_pattern(partition, k);
        for (int a = 0; a < nb; ++a) rows.push_back(n_tr + a);
      } else {
        for (int i = k; i < n; ++i) rows.push_back(i);
      }
      const int m = static_cast<int>(rows.size());
      Eigen::MatrixXd block(m, m);
      for (int a = 0; a < m; ++a)
        for (int c = 0; c < m; ++c) block(a, c) = theta(rows[a], rows[c]);
      Eigen::VectorXd col = kl_column(block);
      for (int a = 0; a < m; ++a) l(rows[a], k) = col[a];
    }

    Eigen::MatrixXd lb = l.bottomRows(nb);  // batch rows across all columns
    Eigen::MatrixXd prec = lb * lb.transpose();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nb);
    for (int k = 0; k < n_tr; ++k)
      rhs += lb.col(k) * l.col(k).head(n_tr).dot(y_pos);
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    out.batch_covariance[b] = llt.solve(Eigen::MatrixXd::Identity(nb, nb));
    Eigen::VectorXd mu = -llt.solve(rhs);
    for (int a = 0; a < nb; ++a) out.mean[idx[a]] = mu[a];
  }
  return out;
}

}  // namespace testutil
