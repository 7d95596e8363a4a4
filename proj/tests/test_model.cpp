#include <cmath>
#include <limits>

#include "cola/constants.hpp"
#include "cola/model.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cola;

TEST_SUITE("model") {

TEST_CASE("expit values and saturation") {
  CHECK(expit(0.0) == 0.5);
  CHECK(expit(800.0) == 1.0);
  CHECK(expit(-800.0) >= 0.0);
  CHECK(std::isfinite(expit(-700.0)));
  // mpmath at 40 digits
  CHECK(expit(0.364) == doctest::Approx(0.59000837522888003837).epsilon(1e-15));
  CHECK(expit(-30.0) == doctest::Approx(9.357622968839298954e-14).epsilon(1e-12));
  double prev = 0.0;
  for (double x = -50; x <= 50; x += 0.25) {
    CHECK(expit(x) >= prev);
    prev = expit(x);
  }
}

TEST_CASE("logit inverts expit and rejects the boundary") {
  for (double x : {-5.0, -0.3, 0.0, 1.7, 9.0}) CHECK(logit(expit(x)) == doctest::Approx(x).epsilon(1e-12));
  CHECK_THROWS_AS(logit(0.0), InputError);
  CHECK_THROWS_AS(logit(1.0), InputError);
}

TEST_CASE("propensity score") {
  Vector x(6);
  x << 1, 0.2, -1.0, 0.4, 1, 0;
  CHECK(propensity_score(x, Vector::Zero(6)) == 0.5);
  Vector g = Vector::Zero(6);
  g(0) = 0.5;
  Vector intercept_row = Vector::Zero(6);
  intercept_row(0) = 1.0;
  CHECK(propensity_score(intercept_row, g) == doctest::Approx(0.62245933120185456464).epsilon(1e-15));

  const GenerativeModel truth;
  const double expected = expit(0.5 + 0.3 * 0.2 + 0.3 * -1.0 + 0.5 * 0.4 + 0.5 * 1 + 0.3 * 0);
  CHECK(propensity_score(x, truth.gamma) == doctest::Approx(expected).epsilon(1e-15));
  CHECK_THROWS_AS(propensity_score(x, Vector::Zero(5)), InputError);
}

TEST_CASE("iptw weight") {
  CHECK(iptw_weight(1, 0.5) == 2.0);
  CHECK(iptw_weight(0, 0.5) == 2.0);
  CHECK(iptw_weight(1, 0.25) == 4.0);
  CHECK(iptw_weight(0, 0.25) == doctest::Approx(4.0 / 3.0));
  try {
    iptw_weight(1, 0.0, 17);
    FAIL("expected a positivity violation");
  } catch (const PositivityViolation& e) {
    REQUIRE(e.rows().size() == 1);
    CHECK(e.rows()[0] == 17);
  }
  CHECK_THROWS_AS(iptw_weight(0, 1.0), PositivityViolation);
}

TEST_CASE("psi blocks vanish at exact residuals") {
  Vector x(3);
  x << 1, 0.7, -0.2;
  ParameterVector theta{Vector::Zero(3), Vector::Zero(2)};
  theta.gamma << 0.1, -0.4, 0.9;
  theta.beta << -0.3, 0.8;

  // a equal to e(x; gamma): propensity block is zero
  const double e = propensity_score(x, theta.gamma);
  Vector psi = psi_stacked(0.0, e, x, theta);
  CHECK(psi.head(3).cwiseAbs().maxCoeff() < 1e-15);

  // y equal to g(b0 + bA a): outcome block is zero
  psi = psi_stacked(expit(-0.3 + 0.8), 1.0, x, theta);
  CHECK(psi.tail(2).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("psi has mean zero at the truth") {
  // The MSM truth is (logit mu0, log-OR) of the marginal model.
  const std::size_t n = 1'000'000;
  const SiteDataset ds = test::simulated_site(n, 99);
  const GenerativeModel m;
  const ParameterVector theta{m.gamma, (Vector(2) << logit(kTrueMu0), kTrueLogOr).finished()};
  Vector sum = Vector::Zero(8), sq = Vector::Zero(8);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Vector v = psi_stacked(ds.outcome()(r), ds.treatment()(r), ds.design().row(r).transpose(), theta);
    sum += v;
    sq += v.cwiseProduct(v);
  }
  const Vector mean = sum / static_cast<double>(n);
  const Vector sd = (sq / static_cast<double>(n) - mean.cwiseProduct(mean)).cwiseSqrt();
  for (int k = 0; k < 8; ++k) CHECK(std::abs(mean(k)) < 4.0 * sd(k) / 1000.0);
}

TEST_CASE("dataset validation") {
  Matrix x(2, 1);
  x << 0.1, 0.2;
  CHECK_THROWS_AS(SiteDataset::create(Vector::Zero(3), Vector::Zero(2), x, "a"), InputError);
  CHECK_THROWS_AS(SiteDataset::create((Vector(2) << 0, 2).finished(), Vector::Zero(2), x, "a"), InputError);
  CHECK_THROWS_AS(SiteDataset::create(Vector::Zero(2), (Vector(2) << 0, 0.5).finished(), x, "a"), InputError);
  CHECK_THROWS_AS(SiteDataset::create(Vector(0), Vector(0), Matrix(0, 1), "a"), InputError);
  // declared intercept must be a column of ones
  CHECK_THROWS_AS(SiteDataset::create(Vector::Zero(2), Vector::Zero(2), x, "a", true), InputError);
  Matrix with_one(2, 2);
  with_one << 1, 0.1, 1, 0.2;
  const auto d = SiteDataset::create(Vector::Zero(2), Vector::Ones(2), with_one, "a", true);
  CHECK(d.ps_dim() == 2);
  const auto d2 = SiteDataset::create(Vector::Zero(2), Vector::Ones(2), x, "b");
  CHECK(d2.ps_dim() == 2);
  CHECK(d2.design()(1, 0) == 1.0);
  CHECK(d2.param_dim() == 4);
}

TEST_CASE("single row outer sum is the psi outer product") {
  const SiteDataset ds = test::simulated_site(1, 3);
  ParameterVector theta = ParameterVector::zeros(6);
  theta.gamma(1) = 0.2;
  theta.beta << -0.5, 0.3;
  const auto ev = evaluate(ds, theta);
  CHECK(test::max_rel_diff(ev.outer_sum, ev.psi_sum * ev.psi_sum.transpose()) < 1e-15);
}

TEST_CASE("analytic jacobian matches central differences") {
  const SiteDataset ds = test::simulated_site(50, 11);
  ParameterVector theta{GenerativeModel{}.gamma * 0.8, (Vector(2) << -1.1, 0.4).finished()};
  const auto ev = evaluate(ds, theta);
  const Vector t0 = theta.stacked();
  Matrix fd(8, 8);
  for (int j = 0; j < 8; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(t0(j)));
    Vector tp = t0, tm = t0;
    tp(j) += h;
    tm(j) -= h;
    const auto ep = evaluate(ds, ParameterVector::from_stacked(tp, 6), {}, {.with_outer = false});
    const auto em = evaluate(ds, ParameterVector::from_stacked(tm, 6), {}, {.with_outer = false});
    fd.col(j) = (ep.psi_sum - em.psi_sum) / (2 * h);
  }
  CHECK(test::max_rel_diff(ev.jacobian_sum, fd) < 1e-6);
}

TEST_CASE("block sparsity, symmetry and PSD of the sums") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SiteDataset ds = test::simulated_site(40, seed);
    ParameterVector theta{GenerativeModel{}.gamma * 0.1 * static_cast<double>(seed),
                          (Vector(2) << -0.2 * static_cast<double>(seed), 0.5).finished()};
    const auto ev = evaluate(ds, theta);
    CHECK((ev.jacobian_sum.topRightCorner(6, 2).array() == 0.0).all());
    CHECK((ev.outer_sum.array() == ev.outer_sum.transpose().array()).all());
    const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(ev.outer_sum).eigenvalues().minCoeff();
    CHECK(min_eig >= -1e-10 * ev.outer_sum.trace());
    CHECK(ev.sensitivity() == -ev.jacobian_sum);
  }
}

TEST_CASE("sums are additive over partitions") {
  const SiteDataset ds = test::simulated_site(101, 21);
  const ParameterVector theta{GenerativeModel{}.gamma, (Vector(2) << -1.0, 0.36).finished()};
  const auto whole = evaluate(ds, theta);
  auto parts = evaluate(ds.slice(0, 37, "a"), theta);
  parts += evaluate(ds.slice(37, 64, "b"), theta);
  CHECK(parts.n == whole.n);
  CHECK(test::max_rel_diff(parts.psi_sum, whole.psi_sum) < 1e-10);
  CHECK(test::max_rel_diff(parts.jacobian_sum, whole.jacobian_sum) < 1e-10);
  CHECK(test::max_rel_diff(parts.outer_sum, whole.outer_sum) < 1e-10);
}

TEST_CASE("evaluate is deterministic") {
  const SiteDataset ds = test::simulated_site(60, 8);
  const ParameterVector theta{GenerativeModel{}.gamma, (Vector(2) << -1.0, 0.36).finished()};
  const auto a = evaluate(ds, theta);
  const auto b = evaluate(ds, theta);
  CHECK((a.psi_sum.array() == b.psi_sum.array()).all());
  CHECK((a.jacobian_sum.array() == b.jacobian_sum.array()).all());
  CHECK((a.outer_sum.array() == b.outer_sum.array()).all());
}

TEST_CASE("positivity clamp and strict policy") {
  Matrix x(3, 1);
  x << 0.0, 1.0, 2.0;
  const auto ds = SiteDataset::create((Vector(3) << 0, 1, 0).finished(), (Vector(3) << 1, 0, 1).finished(), x, "p");
  ParameterVector theta = ParameterVector::zeros(2);
  theta.gamma << 0.0, 60.0;  // e = 1 in floating point for rows 1 and 2
  const auto ev = evaluate(ds, theta);
  CHECK(ev.clamped_rows == std::vector<std::size_t>{1, 2});
  CHECK(ev.psi_sum.allFinite());

  ModelSpec strict;
  strict.positivity = PositivityPolicy::strict;
  try {
    evaluate(ds, theta, strict);
    FAIL("expected a positivity violation");
  } catch (const PositivityViolation& e) {
    CHECK(e.rows() == std::vector<std::size_t>{1, 2});
  }
}

TEST_CASE("parameter vector helpers") {
  const Vector t = (Vector(4) << 1, 2, 3, 4).finished();
  const auto p = ParameterVector::from_stacked(t, 2);
  CHECK(p.beta_a() == 4);
  CHECK(p.beta0() == 3);
  CHECK((p.stacked().array() == t.array()).all());
  CHECK(p.max_abs() == 4);
  CHECK(p.is_finite());
  ParameterVector q = p;
  CHECK(q == p);
  q.gamma(0) = std::numeric_limits<double>::infinity();
  CHECK_FALSE(q.is_finite());
}

}  // TEST_SUITE
