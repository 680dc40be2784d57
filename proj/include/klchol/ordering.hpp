#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "klchol/points.hpp"

namespace klchol {

/// Reverse-maximin ordering: perm[k] is the original index occupying
/// position k, positions run first-to-last in the elimination order.
/// lengthscales[i] is the selection distance of original index i (the
/// distance to all later-selected points and the boundary); +inf for the
/// last position when there is no boundary.
///
/// candidate_parents[j] lists earlier-popped points i (later in the
/// ordering) with dist(x_i, x_j) <= capture_rho * lengthscales[i]; it is a
/// superset of every sparsity column with rho <= capture_rho. A
/// capture_rho of 0 means no candidate lists are available.
struct Ordering {
  std::vector<int> perm;
  std::vector<int> inv_perm;
  std::vector<double> lengthscales;
  double capture_rho = 0.0;
  std::vector<std::vector<int>> candidate_parents;

  int size() const { return static_cast<int>(perm.size()); }
  double lengthscale_at_position(int k) const { return lengthscales[perm[k]]; }
};

namespace detail {

// Mutable binary max-heap over (key, index) with exact decrease-key.
// Ties break toward the lower index so the selection is deterministic.
class MaximinHeap {
 public:
  explicit MaximinHeap(std::vector<double> keys)
      : keys_(std::move(keys)), heap_(keys_.size()), pos_(keys_.size()),
        size_(static_cast<int>(keys_.size())) {
    for (std::size_t i = 0; i < heap_.size(); ++i) heap_[i] = static_cast<int>(i);
    for (std::size_t i = heap_.size(); i-- > 0;) sift_down(i);
    for (std::size_t i = 0; i < heap_.size(); ++i) pos_[heap_[i]] = static_cast<int>(i);
  }

  bool empty() const { return size_ == 0; }
  int size() const { return size_; }

  std::pair<int, double> pop() {
    const int top = heap_[0];
    const double key = keys_[top];
    size_--;
    heap_[0] = heap_[size_];
    pos_[heap_[0]] = 0;
    pos_[top] = -1;
    if (size_ > 0) sift_down(0);
    return {top, key};
  }

  bool contains(int i) const { return pos_[i] >= 0; }
  double key(int i) const { return keys_[i]; }

  void decrease(int i, double value) {
    if (pos_[i] < 0) return;
    if (value >= keys_[i]) return;
    keys_[i] = value;
    sift_down(pos_[i]);
  }

  void init_size() { size_ = static_cast<int>(heap_.size()); }

 private:
  bool better(int a, int b) const {
    if (keys_[a] != keys_[b]) return keys_[a] > keys_[b];
    return a < b;
  }

  void sift_down(std::size_t i) {
    const std::size_t n = static_cast<std::size_t>(size_);
    while (true) {
      std::size_t l = 2 * i + 1, r = 2 * i + 2, best = i;
      if (l < n && better(heap_[l], heap_[best])) best = l;
      if (r < n && better(heap_[r], heap_[best])) best = r;
      if (best == i) break;
      std::swap(heap_[i], heap_[best]);
      pos_[heap_[i]] = static_cast<int>(i);
      pos_[heap_[best]] = static_cast<int>(best);
      i = best;
    }
  }

  std::vector<double> keys_;
  std::vector<int> heap_;
  std::vector<int> pos_;
  int size_ = 0;
};

}  // namespace detail

/// O(N^2) greedy reference implementation of the reverse-maximin
/// ordering. Selection runs last-to-first; ties break toward the lowest
/// original index.
inline Ordering reverse_maximin_reference(const PointSet& points) {
  const int n = points.size();
  if (n == 0) throw std::invalid_argument("reverse_maximin: empty point set");
  Ordering ord;
  ord.perm.resize(n);
  ord.inv_perm.resize(n);
  ord.lengthscales.assign(n, 0.0);

  std::vector<double> key(n);
  for (int i = 0; i < n; ++i) key[i] = points.boundary_dist(i);
  std::vector<char> selected(n, 0);

  for (int k = n - 1; k >= 0; --k) {
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (selected[i]) continue;
      if (best < 0 || key[i] > key[best] || (key[i] == key[best] && i < best)) best = i;
    }
    selected[best] = 1;
    ord.perm[k] = best;
    ord.lengthscales[best] = key[best];
    for (int j = 0; j < n; ++j) {
      if (selected[j]) continue;
      key[j] = std::min(key[j], points.dist(j, best));
    }
  }
  for (int k = 0; k < n; ++k) ord.inv_perm[ord.perm[k]] = k;
  return ord;
}

/// Heap-based reverse-maximin ordering with lazy candidate lists.
/// Produces the same permutation and lengthscales as the O(N^2)
/// reference, and additionally retains the parent candidate lists used
/// to build sparsity patterns with rho <= capture_rho.
inline Ordering reverse_maximin(const PointSet& points, double capture_rho = 2.0) {
  const int n = points.size();
  if (n == 0) throw std::invalid_argument("reverse_maximin: empty point set");
  if (capture_rho < 2.0) capture_rho = 2.0;

  Ordering ord;
  ord.perm.resize(n);
  ord.inv_perm.resize(n);
  ord.lengthscales.assign(n, 0.0);
  ord.capture_rho = capture_rho;
  ord.candidate_parents.assign(n, {});

  std::vector<double> init_keys(n);
  for (int i = 0; i < n; ++i) init_keys[i] = points.boundary_dist(i);

  detail::MaximinHeap heap(std::move(init_keys));

  // children[i]: (distance to i, index) of unpopped candidates within
  // capture_rho * l_i at pop time, sorted by distance.
  std::vector<std::vector<std::pair<double, int>>> children(n);
  std::vector<std::vector<int>> parents(n);
  std::vector<double> lpos(n, 0.0);  // final lengthscale by original index
  std::vector<char> popped(n, 0);

  // first selection; its children list holds every point, so it stays a
  // universally feasible scan target even when a boundary bounds its key
  int root = -1;
  {
    auto [i, l] = heap.pop();
    popped[i] = 1;
    lpos[i] = l;
    ord.perm[n - 1] = i;
    root = i;
    children[i].reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = points.dist(i, j);
      heap.decrease(j, d);
      children[i].push_back({d, j});
      parents[j].push_back(i);
      ord.candidate_parents[j].push_back(i);
    }
    std::sort(children[i].begin(), children[i].end());
  }

  for (int k = n - 2; k >= 0; --k) {
    auto [i, l] = heap.pop();
    popped[i] = 1;
    lpos[i] = l;
    ord.perm[k] = i;

    // closest feasible parent: its candidate ball covers ours
    int par = -1;
    double par_dist = std::numeric_limits<double>::infinity();
    for (int cand : parents[i]) {
      const double d = points.dist(i, cand);
      const double lk = lpos[cand];
      const bool feasible = cand == root || std::isinf(lk) ||
                            (d + capture_rho * l <= capture_rho * lk);
      if (feasible && (d < par_dist || (d == par_dist && cand < par))) {
        par = cand;
        par_dist = d;
      }
    }
    if (par < 0) throw std::logic_error("reverse_maximin: no feasible parent");

    const double scan_bound = par_dist + capture_rho * l;
    for (const auto& [djk, j] : children[par]) {
      if (djk > scan_bound) break;
      if (popped[j]) continue;
      const double d = points.dist(i, j);
      heap.decrease(j, d);
      if (d <= capture_rho * l) {
        children[i].push_back({d, j});
        parents[j].push_back(i);
        ord.candidate_parents[j].push_back(i);
      }
    }
    std::sort(children[i].begin(), children[i].end());
  }

  ord.lengthscales = lpos;
  for (int k = 0; k < n; ++k) ord.inv_perm[ord.perm[k]] = k;
  return ord;
}

/// Prediction-points-first joint ordering. Joint original indices place
/// the prediction points at 0..N_Pr-1 and the training points after
/// them. The prediction ordering sees the training points as part of
/// the boundary, so prediction points near training data get small
/// lengthscales.
inline Ordering joint_ordering_prediction_first(const PointSet& train, const PointSet& pred) {
  if (train.size() == 0)
    throw std::invalid_argument("joint_ordering_prediction_first: empty training set");
  const int n_pr = pred.size();
  const int n_tr = train.size();

  Ordering tr = reverse_maximin(train);

  Ordering joint;
  joint.perm.resize(n_pr + n_tr);
  joint.inv_perm.resize(n_pr + n_tr);
  joint.lengthscales.resize(n_pr + n_tr);
  joint.capture_rho = 0.0;  // candidate lists do not span the two blocks

  if (n_pr > 0) {
    BoundaryDistance base = pred.boundary_distance;
    BoundaryDistance augmented = [&train, base](const Eigen::VectorXd& x) {
      double d = base ? base(x) : std::numeric_limits<double>::infinity();
      for (int i = 0; i < train.size(); ++i)
        d = std::min(d, (train.coords.row(i).transpose() - x).norm());
      return d;
    };
    PointSet pred_aug(pred.coords, augmented);
    Ordering pr = reverse_maximin(pred_aug);
    for (int k = 0; k < n_pr; ++k) joint.perm[k] = pr.perm[k];
    for (int i = 0; i < n_pr; ++i) joint.lengthscales[i] = pr.lengthscales[i];
  }
  for (int k = 0; k < n_tr; ++k) joint.perm[n_pr + k] = n_pr + tr.perm[k];
  for (int i = 0; i < n_tr; ++i) joint.lengthscales[n_pr + i] = tr.lengthscales[i];
  for (int k = 0; k < n_pr + n_tr; ++k) joint.inv_perm[joint.perm[k]] = k;
  return joint;
}

/// Joint point set matching joint_ordering_prediction_first's index
/// convention: prediction rows first, training rows after.
inline PointSet joint_points(const PointSet& train, const PointSet& pred) {
  Eigen::MatrixXd coords(pred.size() + train.size(), train.dim());
  if (pred.size() > 0) {
    if (pred.dim() != train.dim())
      throw std::invalid_argument("joint_points: dimension mismatch");
    coords.topRows(pred.size()) = pred.coords;
  }
  coords.bottomRows(train.size()) = train.coords;
  return PointSet(std::move(coords), train.boundary_distance);
}

}  // namespace klchol
