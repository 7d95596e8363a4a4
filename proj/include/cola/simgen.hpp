// Simulation data for the multi-site study.
//
// Covariates: X1, X2, X3 ~ N(0, 1); X4 ~ Bernoulli(0.5); X5 ~ Bernoulli(0.6).
// Treatment:  P(A = 1 | X) = expit(0.5 + 0.3 X1 + 0.3 X2 + 0.5 X3 + 0.5 X4 + 0.3 X5).
// Outcome:    P(Y = 1 | A, X) = expit(c + 0.4 A + 0.3 X1 + 0.5 X2 + 0.3 X3 + 0.3 X4 + 0.5 X5),
// with c chosen so that P(Y = 1) = 0.30.
//
// Site 5 is drawn from the population by P(site 5 | Y) = expit(a + b Y), which
// lets its case rate differ from everyone else's. The remaining rows fill
// sites 1-4 with sizes 100, 80, 80 and 100 - n5 in row order.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cola/model.hpp"

namespace cola {

/// Intercept that puts the marginal case rate at 0.30 (found by quadrature).
inline constexpr double kCalibratedOutcomeIntercept = -1.6896368727518585;

/// Targets that cannot be met by any assignment probability.
class InfeasibleTarget : public InputError {
 public:
  using InputError::InputError;
};

struct GenerativeModel {
  Vector gamma = (Vector(6) << 0.5, 0.3, 0.3, 0.5, 0.5, 0.3).finished();
  double outcome_intercept = kCalibratedOutcomeIntercept;
  double outcome_treatment = 0.4;
  Vector outcome_covariates = (Vector(5) << 0.3, 0.5, 0.3, 0.3, 0.5).finished();
  double p_x4 = 0.5;
  double p_x5 = 0.6;

  double treatment_probability(const Eigen::Ref<const Vector>& x) const;
  double outcome_probability(double a, const Eigen::Ref<const Vector>& x) const;
};

/// Rows before they are split into sites. `x` has the five covariates.
struct Population {
  Vector y;
  Vector a;
  Matrix x;
  std::size_t size() const noexcept { return static_cast<std::size_t>(y.size()); }
};

Population generate_population(std::size_t n, std::uint64_t seed, const GenerativeModel& model = {});

struct AssignmentParams {
  double a = 0.0;
  double b = 0.0;
  double p_case = 0.0;     ///< expit(a + b)
  double p_control = 0.0;  ///< expit(a)
};

/// Closed-form (a, b) such that the expected site size is target_n and its
/// expected case fraction is target_case_rate, given overall case rate pi.
/// Throws InfeasibleTarget when either probability falls outside (0, 1).
AssignmentParams solve_assignment_params(double target_n, double target_case_rate,
                                         double overall_case_rate, double n_total);

struct MonteCarloTruth {
  double mu1 = 0.0;
  double mu0 = 0.0;
  double log_or = 0.0;
  double case_rate = 0.0;
};

/// Marginal potential-outcome means averaged over `samples` covariate draws.
MonteCarloTruth monte_carlo_truth(std::size_t samples, std::uint64_t seed,
                                  const GenerativeModel& model = {});

struct RareCovariate {
  std::size_t site = 0;       ///< index into the site list
  std::size_t covariate = 3;  ///< 0-based covariate column (X4)
  double probability = 0.02;
};

struct RareOutcome {
  std::size_t site = 0;
  double target_n = 100.0;
  double case_rate = 0.05;
};

enum class SiteLayout {
  outcome_dependent,  ///< site 5 drawn by expit(a + bY), sites 1-4 filled in order
  equal_split,        ///< contiguous, nearly equal sites
};

struct ScenarioConfig {
  int scenario_id = 1;
  SiteLayout layout = SiteLayout::outcome_dependent;
  std::size_t k_sites = 5;
  std::size_t population = 360;
  double site5_target_n = 50.0;
  double site5_case_rate = 0.05;
  /// Size of each site beyond the first five.
  std::size_t extra_site_size = 80;
  double overall_case_rate = 0.30;
  std::optional<RareCovariate> rare_covariate;
  std::optional<RareOutcome> rare_outcome;
  /// Move a bad first site behind the largest later good one.
  bool reorder_bad_start = false;
  /// Explicit relay order; empty means the default for the layout.
  std::vector<std::size_t> site_order;
  std::uint64_t base_seed = 20240101;
  GenerativeModel model{};
  int max_attempts = 1000;

  void validate() const;

  /// Scenario presets 1-6. `k_sites` only matters for scenario 3.
  static ScenarioConfig scenario(int id, std::uint64_t seed, std::size_t k_sites = 5);
  static ScenarioConfig equal_split(std::size_t n_total, std::size_t k_sites, std::uint64_t seed);
};

struct TrialDiagnostics {
  std::uint64_t replicate = 0;
  std::uint64_t seed = 0;  ///< seed of the accepted attempt
  int regenerations = 0;
  std::size_t n5 = 0;
  std::optional<AssignmentParams> site5;
  std::optional<AssignmentParams> rare_outcome;
  std::vector<double> case_rates;
};

struct GeneratedTrial {
  std::vector<SiteDataset> sites;
  /// Relay order (indices into `sites`).
  std::vector<std::size_t> order;
  /// Population row indices held by each site.
  std::vector<std::vector<std::size_t>> rows;
  std::vector<bool> bad_sites;
  double true_log_or = 0.0;
  GenerativeModel truth;
  TrialDiagnostics diagnostics;

  std::vector<SiteDataset> ordered_sites() const;
};

/// Deterministic in (config, replicate).
GeneratedTrial generate_trial(const ScenarioConfig& config, std::uint64_t replicate = 0);

/// Writes site<k>.csv for every site and manifest.json.
void write_trial(const std::filesystem::path& dir, const GeneratedTrial& trial,
                 const ScenarioConfig& config);

}  // namespace cola
