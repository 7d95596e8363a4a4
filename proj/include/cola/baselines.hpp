// Comparators for the relay: classical inverse-variance meta-analysis of
// site-local IPTW fits, and the centralized oracle on pooled rows.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "cola/engine.hpp"

namespace cola {

/// Result of the two-stage IPTW fit on one site's own rows.
struct LocalFit {
  std::string site_id;
  bool ok = false;
  FailureReason failure = FailureReason::none;
  double beta_a = 0.0;
  double se_beta_a = 0.0;
  ParameterVector theta;
};

/// Full two-stage fit (gamma, then beta at gamma) with a local sandwich SE.
LocalFit fit_site_locally(const SiteDataset& dataset, const SolverConfig& config = {});

/// When a whole replication counts as a meta-analysis failure.
enum class MetaFailureRule {
  any_site,         ///< any site without a usable local estimate
  fewer_than_two,   ///< fewer than two usable sites remain
  all_sites,        ///< no usable site at all
};

struct ExcludedSite {
  std::string site_id;
  FailureReason reason = FailureReason::none;
};

struct MetaResult {
  double pooled_effect = 0.0;  ///< log-OR scale
  double pooled_se = 0.0;
  std::vector<std::string> included_sites;
  std::vector<ExcludedSite> excluded_sites;
  std::vector<double> weights;  ///< normalised, aligned with included_sites
  int n_included = 0;
  /// Replication-level outcome under the configured rule.
  bool failed = true;
  /// Exactly one usable site: the value is that site's estimate.
  bool single_site = false;
  Interval ci95{};
};

MetaResult meta_analyze(std::span<const SiteDataset> sites, const SolverConfig& config = {},
                        MetaFailureRule rule = MetaFailureRule::any_site);

/// Pools already computed local fits (same rules as meta_analyze).
MetaResult pool_local_fits(std::span<const LocalFit> fits, MetaFailureRule rule);

/// Centralized joint fit on the concatenated rows with its sandwich covariance.
InferenceResult oracle_analyze(std::span<const SiteDataset> sites, const SolverConfig& config = {});

}  // namespace cola
