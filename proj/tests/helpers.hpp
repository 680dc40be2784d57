#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "klchol/points.hpp"
#include "klchol/rng.hpp"

namespace testutil {

inline Eigen::MatrixXd random_coords(int n, int d, std::uint64_t seed) {
  klchol::SplitMix64 rng(seed);
  Eigen::MatrixXd coords(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) coords(i, k) = rng.next_uniform();
  return coords;
}

inline klchol::PointSet random_points(int n, int d, std::uint64_t seed) {
  return klchol::PointSet(random_coords(n, d, seed));
}

inline klchol::PointSet grid_points(int nx, int ny) {
  Eigen::MatrixXd coords(nx * ny, 2);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      coords(i * ny + j, 0) = (i + 0.5) / nx;
      coords(i * ny + j, 1) = (j + 0.5) / ny;
    }
  return klchol::PointSet(std::move(coords));
}

}  // namespace testutil
