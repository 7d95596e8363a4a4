#include <cmath>

#include "cola/estimands.hpp"
#include "doctest.h"

using namespace cola;

TEST_SUITE("estimands") {

TEST_CASE("null effect") {
  const auto r = derive_estimands(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity() * 0.01);
  CHECK(r.mu1 == 0.5);
  CHECK(r.mu0 == 0.5);
  CHECK(r.delta_d == 0.0);
  CHECK(r.log_rr == 0.0);
  CHECK(r.log_or == 0.0);
  CHECK(r.or_point == 1.0);
}

TEST_CASE("log-OR is the treatment slope") {
  Eigen::Matrix2d cov;
  cov << 0.04, -0.01, -0.01, 0.09;
  const auto r = derive_estimands(Eigen::Vector2d(0, 0.364), cov);
  CHECK(r.log_or == 0.364);
  CHECK(r.or_point == doctest::Approx(1.43907421415804627650).epsilon(1e-14));
  CHECK(r.se_log_or == doctest::Approx(0.3));
  CHECK(r.ci95_log_or.first == doctest::Approx(0.364 - 1.959964 * 0.3));
  CHECK(r.ci95_or.first == std::exp(r.ci95_log_or.first));
  CHECK(r.ci95_or.second == std::exp(r.ci95_log_or.second));
  CHECK(r.ci95_or.first < r.ci95_or.second);
}

TEST_CASE("delta-method gradients match central differences") {
  const Eigen::Vector2d beta(-1.2, 0.45);
  const auto g = estimand_gradients(beta);
  const auto value = [](const Eigen::Vector2d& b) {
    const auto r = derive_estimands(b, Eigen::Matrix2d::Zero());
    return Eigen::Vector3d(r.delta_d, r.log_rr, r.log_or);
  };
  for (int j = 0; j < 2; ++j) {
    const double h = 1e-6;
    Eigen::Vector2d p = beta, m = beta;
    p(j) += h;
    m(j) -= h;
    const Eigen::Vector3d fd = (value(p) - value(m)) / (2 * h);
    CHECK(std::abs(fd(0) - g.delta_d(j)) <= 1e-6 * std::abs(g.delta_d(j)));
    CHECK(std::abs(fd(1) - g.log_rr(j)) <= 1e-6 * std::abs(g.log_rr(j)));
    CHECK(std::abs(fd(2) - g.log_or(j)) <= 1e-6 * std::max(1.0, std::abs(g.log_or(j))));
  }
}

TEST_CASE("estimands increase with the treatment slope") {
  double prev_mu1 = -1, prev_d = -1, prev_rr = -10, prev_or = -10;
  for (double b = -1.0; b <= 1.0; b += 0.1) {
    const auto r = derive_estimands(Eigen::Vector2d(-0.7, b), Eigen::Matrix2d::Identity() * 0.01);
    CHECK(r.mu1 > prev_mu1);
    CHECK(r.delta_d > prev_d);
    CHECK(r.log_rr > prev_rr);
    CHECK(r.log_or > prev_or);
    prev_mu1 = r.mu1;
    prev_d = r.delta_d;
    prev_rr = r.log_rr;
    prev_or = r.log_or;
  }
}

TEST_CASE("other links") {
  const auto id = derive_estimands(Eigen::Vector2d(0.2, 0.1), Eigen::Matrix2d::Identity() * 1e-4, Link::identity);
  CHECK(id.mu1 == doctest::Approx(0.3));
  CHECK(id.delta_d == doctest::Approx(0.1));
  const auto lg = derive_estimands(Eigen::Vector2d(std::log(0.2), std::log(1.5)), Eigen::Matrix2d::Identity() * 1e-4,
                                   Link::log);
  CHECK(lg.log_rr == doctest::Approx(std::log(1.5)));
}

}  // TEST_SUITE
