// Replication runner for the simulation study and its summary metrics.
//
// Fails% counts each method's own non-convergences over all replicates.
// CP, Abias, MSE (median estimated SE) and ESE are computed only over the
// replicates in which every requested method converged.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cola/baselines.hpp"
#include "cola/simgen.hpp"

namespace cola {

enum class Method { Oracle, ThreeR, TwoR, TwoRInf, OneR, Meta };

/// Display names: Oracle, 3R-COLA, 2R-COLA, 2R-COLA-INF, 1R-COLA, Meta.
std::string_view to_string(Method method) noexcept;
/// Accepts display names and the short forms oracle, 3r, 2r, 2r-inf, 1r, meta.
Method parse_method(std::string_view name);
/// Comma-separated list; "all" expands to every method in display order.
std::vector<Method> parse_methods(std::string_view list);
std::vector<Method> all_methods();

struct MethodEstimate {
  bool converged = false;
  FailureReason failure = FailureReason::none;
  double beta_a = 0.0;
  double se = 0.0;
};

struct ReplicateRecord {
  std::uint64_t replicate = 0;
  std::vector<MethodEstimate> estimates;  ///< aligned with the method list
  int regenerations = 0;
  std::size_t n5 = 0;
};

struct MetricsRow {
  Method method = Method::Oracle;
  double fails_pct = 0.0;
  /// NaN when no replicate entered the pool.
  double cp_pct = 0.0;
  double abias = 0.0;
  double mse = 0.0;
  double ese = 0.0;
  long long n_reps = 0;
  long long n_converged = 0;
  long long n_pooled = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&);
};

struct ExperimentOptions {
  std::vector<Method> methods = all_methods();
  std::size_t n_reps = 100;
  /// 0 uses the hardware concurrency.
  unsigned threads = 0;
  SolverConfig solver{};
  MetaFailureRule meta_rule = MetaFailureRule::any_site;
  /// Reference log-OR for coverage; defaults to the checked-in constant.
  std::optional<double> truth;
};

struct ExperimentResult {
  ScenarioConfig config;
  std::vector<Method> methods;
  std::vector<ReplicateRecord> records;
  std::vector<MetricsRow> rows;
  double truth = 0.0;
};

/// Runs every method on one generated trial.
std::vector<MethodEstimate> run_methods(const GeneratedTrial& trial, const std::vector<Method>& methods,
                                        const SolverConfig& solver,
                                        MetaFailureRule meta_rule = MetaFailureRule::any_site);

ExperimentResult run_experiment(const ScenarioConfig& config, const ExperimentOptions& options);

std::vector<MetricsRow> compute_metrics(const std::vector<ReplicateRecord>& records,
                                        const std::vector<Method>& methods, double truth);

enum class ReportFormat { table_text, csv, json };
ReportFormat parse_report_format(std::string_view name);

/// Run description carried in JSON reports.
struct ReportMeta {
  std::optional<int> scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::optional<double> truth;
};

std::string emit_report(const std::vector<MetricsRow>& rows, ReportFormat format,
                        const ReportMeta& meta = {});
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);
std::vector<MetricsRow> parse_metrics_json(std::string_view text);

/// Rare-probability sweep. `kind` is "covariate" (scenarios 4/5) or
/// "outcome" (scenario 6); the result is CSV with one line per (value, method).
struct SweepOptions {
  std::string kind = "covariate";
  std::vector<double> grid{0.01, 0.02, 0.05, 0.10};
  bool reorder = false;
};
std::string run_sweep(const SweepOptions& sweep, std::uint64_t seed, const ExperimentOptions& options);

}  // namespace cola
