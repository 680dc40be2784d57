#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>

namespace klchol {

/// Distance from a point to the domain boundary. Empty function means
/// an empty boundary (distances treated as +inf).
using BoundaryDistance = std::function<double(const Eigen::VectorXd&)>;

/// N points in R^d, with an optional boundary-distance callback.
struct PointSet {
  Eigen::MatrixXd coords;  // N x d, one point per row
  BoundaryDistance boundary_distance;

  PointSet() = default;
  explicit PointSet(Eigen::MatrixXd c, BoundaryDistance bd = nullptr)
      : coords(std::move(c)), boundary_distance(std::move(bd)) {
    if (coords.cols() < 1) throw std::invalid_argument("PointSet: d must be >= 1");
  }

  int size() const { return static_cast<int>(coords.rows()); }
  int dim() const { return static_cast<int>(coords.cols()); }

  double dist(int i, int j) const {
    return (coords.row(i) - coords.row(j)).norm();
  }

  double boundary_dist(int i) const {
    if (!boundary_distance) return std::numeric_limits<double>::infinity();
    return boundary_distance(coords.row(i).transpose());
  }
};

/// Boundary given by the faces of the axis-aligned box [lo, hi]^d.
inline BoundaryDistance box_boundary(double lo, double hi) {
  return [lo, hi](const Eigen::VectorXd& x) {
    double d = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < x.size(); ++k)
      d = std::min(d, std::min(x[k] - lo, hi - x[k]));
    return std::max(d, 0.0);
  };
}

}  // namespace klchol
