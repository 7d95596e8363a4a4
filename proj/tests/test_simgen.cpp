#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cola/constants.hpp"
#include "cola/rng.hpp"
#include "cola/simgen.hpp"
#include "doctest.h"

using namespace cola;

namespace {

bool same_site(const SiteDataset& a, const SiteDataset& b) {
  return a.site_id() == b.site_id() && a.size() == b.size() && (a.outcome().array() == b.outcome().array()).all() &&
         (a.treatment().array() == b.treatment().array()).all() &&
         (a.covariates().array() == b.covariates().array()).all();
}

}  // namespace

TEST_SUITE("simgen") {

TEST_CASE("rng is reproducible and roughly uniform") {
  Rng a(42), b(42), c(43);
  double sum = 0;
  bool differs = false;
  for (int i = 0; i < 100000; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    differs = differs || u != c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(differs);
  CHECK(sum / 100000 == doctest::Approx(0.5).epsilon(0.01));
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
}

TEST_CASE("population marginals") {
  const Population pop = generate_population(1'000'000, 2024);
  CHECK(std::abs(pop.y.mean() - 0.30) < 0.002);
  CHECK(std::abs(pop.x.col(4).mean() - 0.60) < 0.002);
  CHECK(std::abs(pop.x.col(3).mean() - 0.50) < 0.002);
  CHECK(std::abs(pop.x.col(0).mean()) < 0.005);
  const double var = (pop.x.col(1).array() - pop.x.col(1).mean()).square().mean();
  CHECK(std::abs(var - 1.0) < 0.005);
}

TEST_CASE("population is deterministic in the seed") {
  const Population a = generate_population(500, 9), b = generate_population(500, 9), c = generate_population(500, 10);
  CHECK((a.x.array() == b.x.array()).all());
  CHECK((a.y.array() == b.y.array()).all());
  CHECK_FALSE((a.x.array() == c.x.array()).all());
}

TEST_CASE("Monte-Carlo truth") {
  const auto t = monte_carlo_truth(1'000'000, 77);
  CHECK(std::abs(t.log_or - 0.364) < 0.01);
  CHECK(std::abs(t.log_or - kTrueLogOr) < 0.005);
  CHECK(std::abs(t.case_rate - 0.30) < 0.002);
}

TEST_CASE("assignment parameters") {
  SUBCASE("equal rates mean no outcome dependence") {
    const auto p = solve_assignment_params(50, 0.30, 0.30, 360);
    CHECK(p.b == 0.0);
    CHECK(p.a == doctest::Approx(logit(50.0 / 360.0)).epsilon(1e-15));
  }
  SUBCASE("closed form against an independent computation") {
    const auto p = solve_assignment_params(50, 0.05, 0.30, 360);
    CHECK(p.p_case == doctest::Approx(0.023148148148148148148).epsilon(1e-14));
    CHECK(p.p_control == doctest::Approx(0.18849206349206349206).epsilon(1e-14));
    CHECK(p.a == doctest::Approx(-1.4598382644422609111).epsilon(1e-13));
    CHECK(p.b == doctest::Approx(-2.2825819565997052100).epsilon(1e-13));
  }
  SUBCASE("moment equations are reproduced") {
    for (double rate : {0.02, 0.05, 0.3, 0.5}) {
      const auto p = solve_assignment_params(50, rate, 0.30, 360);
      const double en = 360 * (0.3 * expit(p.a + p.b) + 0.7 * expit(p.a));
      CHECK(std::abs(en - 50) < 1e-12 * 50);
      CHECK(std::abs(360 * 0.3 * expit(p.a + p.b) / 50 - rate) < 1e-12);
    }
  }
  SUBCASE("Monte-Carlo check of size and case rate") {
    const auto p = solve_assignment_params(50, 0.05, 0.30, 360);
    Rng rng(5);
    double n_sum = 0, case_sum = 0;
    const int trials = 100000;
    for (int t = 0; t < trials; ++t) {
      int n = 0, cases = 0;
      for (int i = 0; i < 360; ++i) {
        const bool y = rng.bernoulli(0.3);
        if (rng.bernoulli(y ? p.p_case : p.p_control)) {
          ++n;
          cases += y;
        }
      }
      n_sum += n;
      case_sum += cases;
    }
    CHECK(std::abs(n_sum / trials - 50) < 2);
    CHECK(std::abs(case_sum / n_sum - 0.05) < 0.01);
  }
  CHECK_THROWS_AS(solve_assignment_params(300, 0.9, 0.3, 360), InfeasibleTarget);
  CHECK_THROWS_AS(solve_assignment_params(50, 0.0, 0.3, 360), InfeasibleTarget);
  CHECK_THROWS_AS(solve_assignment_params(400, 0.3, 0.3, 360), InfeasibleTarget);
}

TEST_CASE("trials partition the population exactly") {
  for (int id = 1; id <= 6; ++id) {
    const auto cfg = ScenarioConfig::scenario(id, 11);
    for (std::uint64_t rep = 0; rep < 20; ++rep) {
      const auto t = generate_trial(cfg, rep);
      REQUIRE(t.sites.size() == 5);
      std::size_t total = 0;
      std::set<std::size_t> seen;
      for (const auto& rows : t.rows) {
        for (auto r : rows) CHECK(seen.insert(r).second);
        total += rows.size();
      }
      CHECK(total == 360);
      CHECK(seen.size() == 360);
      if (id != 6) {
        CHECK(t.sites[0].size() == 100);
        CHECK(t.sites[1].size() == 80);
        CHECK(t.sites[2].size() == 80);
        CHECK(t.sites[3].size() == 100 - t.sites[4].size());
      }
    }
  }
}

TEST_CASE("generation is deterministic") {
  const auto cfg = ScenarioConfig::scenario(1, 5);
  const auto a = generate_trial(cfg, 3), b = generate_trial(cfg, 3), c = generate_trial(cfg, 4);
  for (std::size_t k = 0; k < 5; ++k) CHECK(same_site(a.sites[k], b.sites[k]));
  CHECK_FALSE(same_site(a.sites[0], c.sites[0]));
}

TEST_CASE("scenario case rates at site 5") {
  double rate1 = 0, rate2 = 0, others2 = 0, n5 = 0;
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    const auto t1 = generate_trial(ScenarioConfig::scenario(1, 8), r);
    const auto t2 = generate_trial(ScenarioConfig::scenario(2, 8), r);
    rate1 += t1.sites[4].case_rate();
    n5 += static_cast<double>(t1.sites[4].size());
    rate2 += t2.sites[4].case_rate();
    for (int k = 0; k < 4; ++k) others2 += t2.sites[k].case_rate() / 4;
  }
  CHECK(std::abs(rate1 / reps - 0.05) < 0.01);
  CHECK(std::abs(n5 / reps - 50) < 1.5);
  CHECK(std::abs(rate2 / reps - 0.30) < 0.02);
  CHECK(std::abs(others2 / reps - 0.30) < 0.02);
}

TEST_CASE("scenario 5 permutes scenario 4") {
  const auto t4 = generate_trial(ScenarioConfig::scenario(4, 21), 2);
  const auto t5 = generate_trial(ScenarioConfig::scenario(5, 21), 2);
  for (std::size_t k = 0; k < 5; ++k) CHECK(same_site(t4.sites[k], t5.sites[k]));
  CHECK(t4.order == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(t5.order == std::vector<std::size_t>{1, 0, 2, 3, 4});
  CHECK(t4.bad_sites[0]);
}

TEST_CASE("rare covariate is rare only at its site") {
  double rare = 0, elsewhere = 0;
  for (int r = 0; r < 200; ++r) {
    const auto t = generate_trial(ScenarioConfig::scenario(4, 13), r);
    rare += t.sites[0].covariates().col(3).mean();
    elsewhere += t.sites[1].covariates().col(3).mean();
  }
  CHECK(std::abs(rare / 200 - 0.02) < 0.005);
  CHECK(std::abs(elsewhere / 200 - 0.5) < 0.02);
}

TEST_CASE("rare outcome at site 1") {
  double rate = 0, n1 = 0;
  for (int r = 0; r < 300; ++r) {
    const auto t = generate_trial(ScenarioConfig::scenario(6, 17), r);
    rate += t.sites[0].case_rate();
    n1 += static_cast<double>(t.sites[0].size());
  }
  CHECK(std::abs(rate / 300 - 0.05) < 0.01);
  CHECK(std::abs(n1 / 300 - 100) < 3);
}

TEST_CASE("more sites keep site 5 last") {
  for (std::size_t k : {10u, 15u}) {
    const auto cfg = ScenarioConfig::scenario(3, 4, k);
    const auto t = generate_trial(cfg, 0);
    CHECK(t.sites.size() == k);
    CHECK(t.order.back() == 4);
    std::size_t total = 0;
    for (const auto& s : t.sites) total += s.size();
    CHECK(total == 360 + 80 * (k - 5));
  }
}

TEST_CASE("equal split") {
  const auto t = generate_trial(ScenarioConfig::equal_split(2000, 5, 3), 0);
  for (const auto& s : t.sites) CHECK(s.size() == 400);
}

TEST_CASE("config validation") {
  auto c = ScenarioConfig::scenario(1, 1);
  c.population = 100;
  CHECK_THROWS_AS(c.validate(), InputError);
  CHECK_THROWS_AS(ScenarioConfig::scenario(7, 1), InputError);
  auto bad = ScenarioConfig::scenario(1, 1);
  bad.site5_case_rate = 0.99;
  bad.site5_target_n = 300;
  CHECK_THROWS_AS(generate_trial(bad, 0), InfeasibleTarget);
}

}  // TEST_SUITE
