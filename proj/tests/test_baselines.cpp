#include <cmath>
#include <vector>

#include "cola/baselines.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cola;

TEST_SUITE("baselines") {

TEST_CASE("one site pools to its own estimate") {
  const std::vector<SiteDataset> one{test::simulated_site(200, 3, "a")};
  const auto fit = fit_site_locally(one[0]);
  REQUIRE(fit.ok);
  const auto m = meta_analyze(one);
  CHECK_FALSE(m.failed);
  CHECK(m.pooled_effect == fit.beta_a);
  CHECK(m.pooled_se == doctest::Approx(fit.se_beta_a).epsilon(1e-15));
}

TEST_CASE("identical sites") {
  const SiteDataset s = test::simulated_site(200, 4, "a");
  const std::vector<SiteDataset> twins{s, s};
  const auto fit = fit_site_locally(s);
  const auto m = meta_analyze(twins);
  CHECK(m.pooled_effect == doctest::Approx(fit.beta_a).epsilon(1e-15));
  CHECK(m.pooled_se == doctest::Approx(fit.se_beta_a / std::sqrt(2.0)).epsilon(1e-14));
  REQUIRE(m.weights.size() == 2);
  CHECK(m.weights[0] == doctest::Approx(0.5));
}

TEST_CASE("inverse-variance algebra on hand-made fits") {
  std::vector<LocalFit> fits(3);
  fits[0] = {"a", true, FailureReason::none, 0.2, 0.1, {}};
  fits[1] = {"b", true, FailureReason::none, 0.5, 0.2, {}};
  fits[2] = {"c", false, FailureReason::singular_system, 0.0, 0.0, {}};
  const double w0 = 100, w1 = 25;
  const auto m = pool_local_fits(fits, MetaFailureRule::fewer_than_two);
  CHECK(m.pooled_effect == doctest::Approx((w0 * 0.2 + w1 * 0.5) / (w0 + w1)));
  CHECK(m.pooled_se == doctest::Approx(1 / std::sqrt(w0 + w1)));
  CHECK(m.n_included == 2);
  REQUIRE(m.excluded_sites.size() == 1);
  CHECK(m.excluded_sites[0].site_id == "c");
  CHECK(m.excluded_sites[0].reason == FailureReason::singular_system);
  CHECK_FALSE(m.failed);
  CHECK(m.weights[0] + m.weights[1] == doctest::Approx(1.0));
  CHECK(m.weights[0] > 0);

  CHECK(pool_local_fits(fits, MetaFailureRule::any_site).failed);
  CHECK_FALSE(pool_local_fits(fits, MetaFailureRule::all_sites).failed);
  fits[1].ok = false;
  const auto one_left = pool_local_fits(fits, MetaFailureRule::fewer_than_two);
  CHECK(one_left.failed);
  CHECK(one_left.single_site);
  CHECK(one_left.pooled_effect == 0.2);
}

TEST_CASE("a site with no control cases cannot give a local estimate") {
  SiteDataset s = test::simulated_site(120, 5, "z");
  Vector y = s.outcome();
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (s.treatment()(i) == 0.0) y(i) = 0.0;
  }
  const auto broken = SiteDataset::create(y, s.treatment(), s.covariates(), "z");
  const auto fit = fit_site_locally(broken);
  CHECK_FALSE(fit.ok);
  CHECK(fit.failure != FailureReason::none);
  const std::vector<SiteDataset> sites{test::simulated_site(150, 6, "ok"), broken};
  const auto m = meta_analyze(sites);
  CHECK(m.failed);
  CHECK(m.excluded_sites.size() == 1);
  CHECK(m.pooled_effect == fit_site_locally(sites[0]).beta_a);
}

TEST_CASE("oracle delegates to the pooled solve") {
  const std::vector<SiteDataset> sites{test::simulated_site(150, 7, "a"), test::simulated_site(210, 8, "b")};
  const auto o = oracle_analyze(sites);
  REQUIRE(o.converged);
  const auto s = solve_oracle(sites);
  CHECK(o.theta == s.theta_hat);
  const auto ev = evaluate(SiteDataset::concatenate(sites, "p"), s.theta_hat);
  CHECK((o.covariance.array() == sandwich_covariance(ev.sensitivity(), ev.outer_sum).array()).all());
  CHECK(o.n == 360);
}

}  // TEST_SUITE
