#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "klchol/points.hpp"

namespace klchol {

enum class KernelFamily {
  matern12,
  matern32,
  matern52,
  exponential,  // alias of matern12
  squared_exponential,
  brownian_bridge_1d,
  laplace3d,
};

inline KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "matern12") return KernelFamily::matern12;
  if (s == "matern32") return KernelFamily::matern32;
  if (s == "matern52") return KernelFamily::matern52;
  if (s == "exponential") return KernelFamily::exponential;
  if (s == "squared_exponential") return KernelFamily::squared_exponential;
  if (s == "brownian_bridge_1d") return KernelFamily::brownian_bridge_1d;
  if (s == "laplace3d") return KernelFamily::laplace3d;
  throw std::invalid_argument("unknown kernel family: " + s);
}

inline const char* to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::matern12: return "matern12";
    case KernelFamily::matern32: return "matern32";
    case KernelFamily::matern52: return "matern52";
    case KernelFamily::exponential: return "exponential";
    case KernelFamily::squared_exponential: return "squared_exponential";
    case KernelFamily::brownian_bridge_1d: return "brownian_bridge_1d";
    case KernelFamily::laplace3d: return "laplace3d";
  }
  return "?";
}

/// Pointwise covariance function G(x, y).
///
/// Half-integer Matern families use the exponential closed forms; the
/// squared-exponential kernel is provided but its screening behaviour is
/// weak, so the sparse factors converge slowly in rho for it.
struct KernelModel {
  KernelFamily family = KernelFamily::matern32;
  double range = 1.0;     // length-scale parameter
  double variance = 1.0;  // marginal variance multiplier

  KernelModel() = default;
  KernelModel(KernelFamily f, double r, double v) : family(f), range(r), variance(v) {
    if (range <= 0.0) throw std::invalid_argument("KernelModel: range must be positive");
    if (variance <= 0.0) throw std::invalid_argument("KernelModel: variance must be positive");
  }

  bool stationary() const {
    return family != KernelFamily::brownian_bridge_1d && family != KernelFamily::laplace3d;
  }

  double evaluate(const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& y) const {
    if (x.size() != y.size())
      throw std::invalid_argument("KernelModel::evaluate: dimension mismatch");
    switch (family) {
      case KernelFamily::brownian_bridge_1d: {
        if (x.size() != 1)
          throw std::invalid_argument("brownian_bridge_1d requires d = 1");
        const double a = x[0], b = y[0];
        if (a <= 0.0 || a >= 1.0 || b <= 0.0 || b >= 1.0)
          throw std::invalid_argument("brownian_bridge_1d requires points in (0,1)");
        return variance * (std::min(a, b) - a * b);
      }
      case KernelFamily::laplace3d: {
        if (x.size() != 3)
          throw std::invalid_argument("laplace3d requires d = 3");
        const double u = (x - y).norm();
        if (u == 0.0)
          throw std::invalid_argument("laplace3d is singular at x = y");
        return variance / (4.0 * M_PI * u);
      }
      default:
        return eval_stationary((x - y).norm());
    }
  }

  /// Stationary families as a function of the distance u = ||x - y||.
  double eval_stationary(double u) const {
    const double s = u / range;
    switch (family) {
      case KernelFamily::matern12:
      case KernelFamily::exponential:
        return variance * std::exp(-s);
      case KernelFamily::matern32: {
        const double t = std::sqrt(3.0) * s;
        return variance * (1.0 + t) * std::exp(-t);
      }
      case KernelFamily::matern52: {
        const double t = std::sqrt(5.0) * s;
        return variance * (1.0 + t + t * t / 3.0) * std::exp(-t);
      }
      case KernelFamily::squared_exponential:
        return variance * std::exp(-0.5 * s * s);
      default:
        throw std::logic_error("eval_stationary called on non-stationary kernel");
    }
  }

  double evaluate(const PointSet& points, int i, int j) const {
    return evaluate(points.coords.row(i).transpose(), points.coords.row(j).transpose());
  }
};

/// Dense block B with B(a, b) = G(x_rows[a], x_cols[b]).
inline Eigen::MatrixXd assemble_block(const KernelModel& kernel, const PointSet& points,
                                      const std::vector<int>& rows,
                                      const std::vector<int>& cols) {
  Eigen::MatrixXd block(rows.size(), cols.size());
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < cols.size(); ++b)
      block(a, b) = kernel.evaluate(points, rows[a], cols[b]);
  return block;
}

}  // namespace klchol
