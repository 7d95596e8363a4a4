#include "cola/baselines.hpp"

#include <cmath>

namespace cola {

LocalFit fit_site_locally(const SiteDataset& dataset, const SolverConfig& config) {
  LocalFit fit;
  fit.site_id = dataset.site_id();
  const ParameterVector init = ParameterVector::zeros(dataset.ps_dim());
  const SolveOutcome ps = solve_local(dataset, BlockSelector::ps_only(), init, config);
  if (!ps.converged) {
    fit.failure = ps.failure_reason;
    return fit;
  }
  const SolveOutcome msm =
      solve_local(dataset, BlockSelector::msm_only(ps.theta_hat.gamma), ps.theta_hat, config);
  if (!msm.converged) {
    fit.failure = msm.failure_reason;
    return fit;
  }
  fit.theta = msm.theta_hat;
  fit.beta_a = fit.theta.beta_a();
  const auto ev = evaluate(dataset, fit.theta, config.model);
  try {
    const Matrix cov = sandwich_covariance(ev.sensitivity(), ev.outer_sum);
    const double var = cov(cov.rows() - 1, cov.cols() - 1);
    fit.se_beta_a = var > 0.0 ? std::sqrt(var) : 0.0;
  } catch (const SingularSystem&) {
    fit.failure = FailureReason::singular_system;
    return fit;
  }
  if (!std::isfinite(fit.se_beta_a) || fit.se_beta_a <= 0.0 || !std::isfinite(fit.beta_a)) {
    fit.failure = FailureReason::singular_system;
    return fit;
  }
  fit.ok = true;
  return fit;
}

MetaResult pool_local_fits(std::span<const LocalFit> fits, MetaFailureRule rule) {
  if (fits.empty()) throw InputError("meta_analyze: at least one site is required");
  MetaResult r;
  double sum_w = 0.0;
  double sum_wb = 0.0;
  std::vector<double> raw;
  for (const auto& f : fits) {
    if (!f.ok) {
      r.excluded_sites.push_back({f.site_id, f.failure});
      continue;
    }
    const double w = 1.0 / (f.se_beta_a * f.se_beta_a);
    r.included_sites.push_back(f.site_id);
    raw.push_back(w);
    sum_w += w;
    sum_wb += w * f.beta_a;
  }
  r.n_included = static_cast<int>(r.included_sites.size());
  if (r.n_included > 0) {
    r.pooled_effect = sum_wb / sum_w;
    // A single estimate pools to itself, without the w * b / w rounding.
    if (r.n_included == 1) {
      for (const auto& f : fits) {
        if (f.ok) r.pooled_effect = f.beta_a;
      }
    }
    r.pooled_se = 1.0 / std::sqrt(sum_w);
    r.ci95 = {r.pooled_effect - kZ95 * r.pooled_se, r.pooled_effect + kZ95 * r.pooled_se};
    for (double w : raw) r.weights.push_back(w / sum_w);
  }
  r.single_site = r.n_included == 1;
  switch (rule) {
    case MetaFailureRule::any_site:
      r.failed = !r.excluded_sites.empty();
      break;
    case MetaFailureRule::fewer_than_two:
      r.failed = r.n_included < 2;
      break;
    case MetaFailureRule::all_sites:
      r.failed = r.n_included == 0;
      break;
  }
  // With a single input site one estimate is all there is to pool.
  if (fits.size() == 1 && r.n_included == 1) r.failed = false;
  return r;
}

MetaResult meta_analyze(std::span<const SiteDataset> sites, const SolverConfig& config,
                        MetaFailureRule rule) {
  std::vector<LocalFit> fits;
  fits.reserve(sites.size());
  for (const auto& s : sites) fits.push_back(fit_site_locally(s, config));
  return pool_local_fits(fits, rule);
}

InferenceResult oracle_analyze(std::span<const SiteDataset> sites, const SolverConfig& config) {
  const SolveOutcome s = solve_oracle(sites, config);
  if (!s.converged) {
    InferenceResult r;
    r.theta = s.theta_hat;
    r.failure = s.failure_reason;
    return r;
  }
  const SiteDataset pooled = SiteDataset::concatenate(sites, "pooled");
  const EstimatingEvaluation total = evaluate(pooled, s.theta_hat, config.model);
  try {
    InferenceResult r = assemble_inference(s.theta_hat, total.sensitivity(), total.outer_sum,
                                           config.model.link);
    r.n = static_cast<long long>(total.n);
    return r;
  } catch (const SingularSystem&) {
    InferenceResult r;
    r.theta = s.theta_hat;
    r.failure = FailureReason::singular_system;
    return r;
  }
}

}  // namespace cola
