#include <cmath>
#include <limits>

#include "cola/harness.hpp"
#include "doctest.h"

using namespace cola;

TEST_SUITE("harness") {

TEST_CASE("method names") {
  for (Method m : all_methods()) CHECK(parse_method(to_string(m)) == m);
  CHECK(parse_methods("oracle, 3r,meta") == std::vector<Method>{Method::Oracle, Method::ThreeR, Method::Meta});
  CHECK(parse_methods("all").size() == 6);
  CHECK_THROWS_AS(parse_methods("3r,3r"), InputError);
  CHECK_THROWS_AS(parse_method("bogus"), InputError);
}

TEST_CASE("metrics from hand-made records") {
  const double truth = 0.4;
  std::vector<ReplicateRecord> recs(4);
  // method 0 always converges: estimates 0.3, 0.5, 0.9, 0.4 with SE 0.1
  // method 1 fails in replicate 2
  const double est[] = {0.3, 0.5, 0.9, 0.4};
  for (int r = 0; r < 4; ++r) {
    recs[r].estimates = {{true, FailureReason::none, est[r], 0.1}, {r != 2, FailureReason::none, est[r], 0.2}};
  }
  const auto rows = compute_metrics(recs, {Method::Oracle, Method::Meta}, truth);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].fails_pct == 0.0);
  CHECK(rows[1].fails_pct == 25.0);
  CHECK(rows[0].n_pooled == 3);
  // pool is replicates 0,1,3: |bias| = 0.1, 0.1, 0 ; all within 1.96 * 0.1
  CHECK(rows[0].cp_pct == doctest::Approx(100.0));
  CHECK(rows[0].abias == doctest::Approx(0.2 / 3));
  CHECK(rows[0].mse == doctest::Approx(0.1));
  CHECK(rows[0].ese == doctest::Approx(0.1));
  CHECK(rows[0].n_converged == 4);
}

TEST_CASE("a never-converging method yields NA") {
  std::vector<ReplicateRecord> recs(3);
  for (auto& r : recs) r.estimates = {{false, FailureReason::singular_system, 0, 0}};
  const auto rows = compute_metrics(recs, {Method::Meta}, 0.364);
  CHECK(rows[0].fails_pct == 100.0);
  CHECK(std::isnan(rows[0].cp_pct));
  const std::string text = emit_report(rows, ReportFormat::table_text);
  CHECK(text.find("NA") != std::string::npos);
  CHECK(emit_report(rows, ReportFormat::csv).find(",NA,") != std::string::npos);
}

TEST_CASE("csv and json round trips") {
  std::vector<MetricsRow> rows(2);
  rows[0] = {Method::ThreeR, 0.25, 94.5, 0.2134, 0.2611, 0.27411111, 2000, 1995, 1990};
  rows[1] = {Method::Meta, 58.49, std::numeric_limits<double>::quiet_NaN(), 1.0 / 3.0, 0.1, 0.2, 2000, 0, 0};
  CHECK(parse_metrics_csv(emit_report(rows, ReportFormat::csv)) == rows);
  CHECK(parse_metrics_json(emit_report(rows, ReportFormat::json, {.scenario = 1, .seed = 7})) == rows);
  CHECK_THROWS_AS(parse_metrics_csv("bad header\n"), InputError);
  CHECK_THROWS_AS(emit_report({}, ReportFormat::csv), InputError);
}

TEST_CASE("table text is in units of 1e-3") {
  std::vector<MetricsRow> rows(1);
  rows[0] = {Method::Oracle, 0.0, 94.5, 0.213, 0.262, 0.266, 10, 10, 10};
  const std::string t = emit_report(rows, ReportFormat::table_text);
  CHECK(t.find("Oracle") != std::string::npos);
  CHECK(t.find("213") != std::string::npos);
  CHECK(t.find("262") != std::string::npos);
  CHECK(t.find("94.5") != std::string::npos);
}

TEST_CASE("results do not depend on the thread count") {
  ExperimentOptions o;
  o.n_reps = 24;
  o.threads = 1;
  const auto cfg = ScenarioConfig::scenario(1, 99);
  const auto a = run_experiment(cfg, o);
  o.threads = 4;
  const auto b = run_experiment(cfg, o);
  CHECK(a.rows == b.rows);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    for (std::size_t k = 0; k < a.methods.size(); ++k) {
      CHECK(a.records[i].estimates[k].beta_a == b.records[i].estimates[k].beta_a);
    }
  }
}

TEST_CASE("a never-failing method does not change the pool") {
  ExperimentOptions o;
  o.n_reps = 30;
  o.methods = {Method::ThreeR, Method::Meta};
  const auto cfg = ScenarioConfig::scenario(1, 5);
  const auto a = run_experiment(cfg, o);
  o.methods = {Method::ThreeR, Method::Meta, Method::Oracle};
  const auto b = run_experiment(cfg, o);
  REQUIRE(b.rows[2].n_converged == 30);
  CHECK(a.rows[0] == b.rows[0]);
  CHECK(a.rows[1] == b.rows[1]);
}

TEST_CASE("2R and 3R share their bias") {
  ExperimentOptions o;
  o.n_reps = 40;
  o.methods = {Method::ThreeR, Method::TwoR};
  const auto r = run_experiment(ScenarioConfig::scenario(2, 3), o);
  CHECK(r.rows[0].abias == r.rows[1].abias);
  CHECK(r.rows[0].ese == r.rows[1].ese);
}

TEST_CASE("sweep emits one line per grid value and method") {
  ExperimentOptions o;
  o.n_reps = 4;
  o.methods = {Method::Oracle, Method::ThreeR};
  const std::string csv = run_sweep({.kind = "outcome", .grid = {0.05, 0.1}}, 1, o);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK_THROWS_AS(run_sweep({.kind = "nope"}, 1, o), InputError);
}

}  // TEST_SUITE
