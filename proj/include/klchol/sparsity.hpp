#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "klchol/ordering.hpp"
#include "klchol/points.hpp"

namespace klchol {

/// Lower-triangular sparsity pattern in elimination-position space,
/// stored column-compressed. Rows of column j are sorted ascending, so
/// the diagonal entry is always first.
struct SparsityPattern {
  std::vector<int> col_ptr;  // size n+1
  std::vector<int> row_idx;  // concatenated column lists
  double rho = 0.0;

  int cols() const { return static_cast<int>(col_ptr.size()) - 1; }
  std::int64_t nnz() const { return static_cast<std::int64_t>(row_idx.size()); }
  int col_size(int j) const { return col_ptr[j + 1] - col_ptr[j]; }
  const int* col_begin(int j) const { return row_idx.data() + col_ptr[j]; }
  const int* col_end(int j) const { return row_idx.data() + col_ptr[j + 1]; }

  static SparsityPattern from_columns(const std::vector<std::vector<int>>& columns,
                                      double rho = 0.0) {
    SparsityPattern p;
    p.rho = rho;
    const int n = static_cast<int>(columns.size());
    p.col_ptr.resize(n + 1, 0);
    for (int j = 0; j < n; ++j) p.col_ptr[j + 1] = p.col_ptr[j] + static_cast<int>(columns[j].size());
    p.row_idx.reserve(p.col_ptr[n]);
    for (int j = 0; j < n; ++j) {
      if (columns[j].empty() || columns[j][0] != j)
        throw std::invalid_argument("SparsityPattern: column must start with its diagonal");
      for (std::size_t a = 1; a < columns[j].size(); ++a)
        if (columns[j][a] <= columns[j][a - 1])
          throw std::invalid_argument("SparsityPattern: rows must be strictly ascending");
      p.row_idx.insert(p.row_idx.end(), columns[j].begin(), columns[j].end());
    }
    return p;
  }
};

/// Distance-based sparsity pattern: (i, j) with i after j in the
/// ordering and dist(x_i, x_j) <= rho * l_j. Uses the ordering's
/// candidate lists when they cover rho, otherwise scans all pairs.
inline SparsityPattern build_pattern(const Ordering& ordering, const PointSet& points,
                                     double rho) {
  if (rho < 1.0) throw std::invalid_argument("build_pattern: rho must be >= 1");
  const int n = ordering.size();
  if (points.size() != n) throw std::invalid_argument("build_pattern: size mismatch");

  std::vector<std::vector<int>> columns(n);
  const bool fast = ordering.capture_rho > 0.0 && rho <= ordering.capture_rho;

  if (fast) {
#pragma omp parallel for schedule(dynamic, 64)
    for (int j = 0; j < n; ++j) {
      const int oj = ordering.perm[j];
      const double radius = rho * ordering.lengthscales[oj];
      auto& col = columns[j];
      col.push_back(j);
      for (int oi : ordering.candidate_parents[oj]) {
        if (points.dist(oi, oj) <= radius) col.push_back(ordering.inv_perm[oi]);
      }
      std::sort(col.begin() + 1, col.end());
    }
  } else {
#pragma omp parallel for schedule(dynamic, 64)
    for (int j = 0; j < n; ++j) {
      const int oj = ordering.perm[j];
      const double radius = rho * ordering.lengthscales[oj];
      auto& col = columns[j];
      col.push_back(j);
      for (int i = j + 1; i < n; ++i) {
        if (std::isinf(radius) || points.dist(ordering.perm[i], oj) <= radius)
          col.push_back(i);
      }
    }
  }
  return SparsityPattern::from_columns(columns, rho);
}

/// Greedy geometric aggregation of columns into supernodes. Each
/// supernode k~ has parents (the aggregated columns, ascending) and
/// children (the union of the parents' pattern columns, ascending).
struct SupernodePartition {
  struct Supernode {
    std::vector<int> parents;
    std::vector<int> children;
  };
  std::vector<Supernode> supernodes;
  std::vector<int> supernode_of;  // per column position
  double lambda = 1.0;

  int size() const { return static_cast<int>(supernodes.size()); }
};

inline SupernodePartition aggregate_supernodes(const SparsityPattern& pattern,
                                               const Ordering& ordering, double lambda) {
  const int n = pattern.cols();
  SupernodePartition part;
  part.lambda = lambda;
  part.supernode_of.assign(n, -1);

  if (lambda <= 1.0) {
    part.supernodes.resize(n);
    for (int j = 0; j < n; ++j) {
      part.supernodes[j].parents = {j};
      part.supernodes[j].children.assign(pattern.col_begin(j), pattern.col_end(j));
      part.supernode_of[j] = j;
    }
    return part;
  }

  for (int seed = 0; seed < n; ++seed) {
    if (part.supernode_of[seed] >= 0) continue;
    const double l_seed = ordering.lengthscale_at_position(seed);
    const double cutoff = lambda * l_seed;  // inf stays inf
    SupernodePartition::Supernode sn;
    for (const int* it = pattern.col_begin(seed); it != pattern.col_end(seed); ++it) {
      const int j = *it;
      if (part.supernode_of[j] >= 0) continue;
      if (ordering.lengthscale_at_position(j) <= cutoff) {
        part.supernode_of[j] = static_cast<int>(part.supernodes.size());
        sn.parents.push_back(j);
      }
    }
    std::vector<int> uni;
    for (int k : sn.parents)
      uni.insert(uni.end(), pattern.col_begin(k), pattern.col_end(k));
    std::sort(uni.begin(), uni.end());
    uni.erase(std::unique(uni.begin(), uni.end()), uni.end());
    sn.children = std::move(uni);
    part.supernodes.push_back(std::move(sn));
  }
  return part;
}

/// Aggregated column pattern of column k: the suffix of its supernode's
/// children at or after k. Always a superset of the plain column.
inline std::vector<int> implied_column_pattern(const SupernodePartition& partition, int k) {
  if (k < 0 || k >= static_cast<int>(partition.supernode_of.size()) ||
      partition.supernode_of[k] < 0)
    throw std::invalid_argument("implied_column_pattern: column not assigned to a supernode");
  const auto& children = partition.supernodes[partition.supernode_of[k]].children;
  auto it = std::lower_bound(children.begin(), children.end(), k);
  return std::vector<int>(it, children.end());
}

/// Pattern whose columns are the aggregated column patterns.
inline SparsityPattern aggregated_pattern(const SupernodePartition& partition) {
  const int n = static_cast<int>(partition.supernode_of.size());
  for (int j = 0; j < n; ++j)
    if (partition.supernode_of[j] < 0)
      throw std::invalid_argument("aggregated_pattern: column not assigned to a supernode");
  // two direct passes over the supernodes instead of building one
  // temporary vector per column
  SparsityPattern p;
  p.col_ptr.assign(n + 1, 0);
  for (const auto& sn : partition.supernodes) {
    const int m = static_cast<int>(sn.children.size());
    for (int k : sn.parents) {
      const int off = static_cast<int>(
          std::lower_bound(sn.children.begin(), sn.children.end(), k) - sn.children.begin());
      p.col_ptr[k + 1] = m - off;
    }
  }
  for (int j = 0; j < n; ++j) p.col_ptr[j + 1] += p.col_ptr[j];
  p.row_idx.resize(p.col_ptr[n]);
  for (const auto& sn : partition.supernodes) {
    const int m = static_cast<int>(sn.children.size());
    for (int k : sn.parents) {
      const int off = m - (p.col_ptr[k + 1] - p.col_ptr[k]);
      std::copy(sn.children.begin() + off, sn.children.end(),
                p.row_idx.begin() + p.col_ptr[k]);
    }
  }
  return p;
}

/// Lower triangle of the symbolic square L * L^T of a lower pattern.
inline SparsityPattern symbolic_square_lower(const SparsityPattern& pattern) {
  const int n = pattern.cols();
  std::vector<std::vector<int>> rows_per_col(n);
  for (int k = 0; k < n; ++k) {
    const int* b = pattern.col_begin(k);
    const int* e = pattern.col_end(k);
    for (const int* pj = b; pj != e; ++pj)
      for (const int* pi = pj; pi != e; ++pi) rows_per_col[*pj].push_back(*pi);
  }
  std::vector<std::vector<int>> columns(n);
  for (int j = 0; j < n; ++j) {
    auto& v = rows_per_col[j];
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    columns[j] = std::move(v);
  }
  return SparsityPattern::from_columns(columns);
}

}  // namespace klchol
