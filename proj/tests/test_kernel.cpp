#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "klchol/kernel.hpp"

using namespace klchol;

TEST_CASE("stationary kernels at zero distance give the variance") {
  Eigen::VectorXd x(2);
  x << 0.3, 0.7;
  for (auto family : {KernelFamily::matern12, KernelFamily::matern32, KernelFamily::matern52,
                      KernelFamily::squared_exponential}) {
    KernelModel k(family, 0.7, 2.5);
    REQUIRE(k.evaluate(x, x) == 2.5);
  }
}

TEST_CASE("closed-form values") {
  KernelModel m12(KernelFamily::matern12, 0.5, 1.0);
  Eigen::VectorXd a(1), b(1);
  a << 0.0;
  b << 0.5;
  REQUIRE(m12.evaluate(a, b) == Catch::Approx(std::exp(-1.0)).epsilon(1e-14));

  KernelModel bb(KernelFamily::brownian_bridge_1d, 1.0, 1.0);
  a << 0.25;
  b << 0.5;
  REQUIRE(bb.evaluate(a, b) == Catch::Approx(0.125).epsilon(1e-15));

  KernelModel m32(KernelFamily::matern32, 1.0, 1.0);
  const double t = std::sqrt(3.0) * 0.4;
  REQUIRE(m32.eval_stationary(0.4) == Catch::Approx((1.0 + t) * std::exp(-t)).epsilon(1e-15));

  KernelModel lap(KernelFamily::laplace3d, 1.0, 1.0);
  Eigen::VectorXd p(3), q(3);
  p << 0, 0, 0;
  q << 2, 0, 0;
  REQUIRE(lap.evaluate(p, q) == Catch::Approx(1.0 / (8.0 * M_PI)).epsilon(1e-14));
}

TEST_CASE("exponential is an alias of matern12") {
  KernelModel e(KernelFamily::exponential, 0.3, 1.5);
  KernelModel m(KernelFamily::matern12, 0.3, 1.5);
  for (double u : {0.0, 0.1, 0.5, 2.0}) REQUIRE(e.eval_stationary(u) == m.eval_stationary(u));
}

TEST_CASE("evaluate is exactly symmetric") {
  auto pts = testutil::random_points(20, 3, 11);
  KernelModel k(KernelFamily::matern52, 0.4, 1.0);
  for (int i = 0; i < pts.size(); ++i)
    for (int j = 0; j < pts.size(); ++j)
      REQUIRE(k.evaluate(pts, i, j) == k.evaluate(pts, j, i));
}

TEST_CASE("domain errors") {
  KernelModel bb(KernelFamily::brownian_bridge_1d, 1.0, 1.0);
  Eigen::VectorXd a(1), b(1), c(2);
  a << 0.5;
  b << 1.0;
  REQUIRE_THROWS_AS(bb.evaluate(a, b), std::invalid_argument);
  KernelModel m(KernelFamily::matern32, 1.0, 1.0);
  REQUIRE_THROWS_AS(m.evaluate(a, c), std::invalid_argument);
  KernelModel lap(KernelFamily::laplace3d, 1.0, 1.0);
  Eigen::VectorXd p(3);
  p << 1, 2, 3;
  REQUIRE_THROWS_AS(lap.evaluate(p, p), std::invalid_argument);
  REQUIRE_THROWS_AS(KernelModel(KernelFamily::matern32, -1.0, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(KernelModel(KernelFamily::matern32, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("kernel family names round trip") {
  for (const char* name : {"matern12", "matern32", "matern52", "exponential",
                           "squared_exponential", "brownian_bridge_1d", "laplace3d"})
    REQUIRE(std::string(to_string(kernel_family_from_string(name))) == name);
  REQUIRE_THROWS_AS(kernel_family_from_string("gauss"), std::invalid_argument);
}

TEST_CASE("assembled Gram blocks are bitwise symmetric and PSD") {
  auto pts = testutil::random_points(30, 2, 7);
  std::vector<int> idx(30);
  for (int i = 0; i < 30; ++i) idx[i] = i;
  for (auto family : {KernelFamily::matern12, KernelFamily::matern32, KernelFamily::matern52,
                      KernelFamily::squared_exponential}) {
    KernelModel k(family, 0.5, 1.3);
    Eigen::MatrixXd g = assemble_block(k, pts, idx, idx);
    REQUIRE((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    REQUIRE(es.eigenvalues().minCoeff() >= -1e-10 * g.norm());
  }
}

TEST_CASE("matern families decay with distance") {
  for (auto family : {KernelFamily::matern12, KernelFamily::matern32, KernelFamily::matern52}) {
    KernelModel k(family, 0.7, 1.0);
    double prev = k.eval_stationary(0.0);
    for (int s = 1; s <= 60; ++s) {
      const double cur = k.eval_stationary(0.05 * s);
      REQUIRE(cur <= prev);
      prev = cur;
    }
  }
}

TEST_CASE("assemble_block matches elementwise evaluation") {
  Eigen::MatrixXd coords(3, 1);
  coords << 0.0, 0.4, 1.0;
  PointSet pts(coords);
  KernelModel k(KernelFamily::matern12, 0.5, 1.0);
  Eigen::MatrixXd g = assemble_block(k, pts, {0, 1, 2}, {0, 1, 2});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) REQUIRE(g(i, j) == k.evaluate(pts, i, j));
  Eigen::MatrixXd one = assemble_block(k, pts, {1}, {1});
  REQUIRE(one.rows() == 1);
  REQUIRE(one(0, 0) == 1.0);
}
