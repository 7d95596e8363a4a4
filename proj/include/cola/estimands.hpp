#pragma once

#include <utility>

#include "cola/model.hpp"

namespace cola {

/// Two-sided 95% normal quantile.
inline constexpr double kZ95 = 1.959964;

using Interval = std::pair<double, double>;

/// Causal contrasts implied by an MSM fit g(beta0 + betaA a).
struct EstimandReport {
  double mu1 = 0.0;
  double mu0 = 0.0;
  double delta_d = 0.0;  ///< mu1 - mu0
  double se_delta_d = 0.0;
  Interval ci95_delta_d{};
  double log_rr = 0.0;   ///< log(mu1 / mu0)
  double se_log_rr = 0.0;
  Interval ci95_log_rr{};
  double log_or = 0.0;
  double se_log_or = 0.0;
  Interval ci95_log_or{};
  double or_point = 0.0;
  Interval ci95_or{};
};

/// Gradients of (delta_d, log_rr, log_or) with respect to (beta0, betaA).
struct EstimandGradients {
  Eigen::Vector2d delta_d;
  Eigen::Vector2d log_rr;
  Eigen::Vector2d log_or;
};

EstimandGradients estimand_gradients(const Eigen::Vector2d& beta, Link link = Link::logistic);

/// Delta-method SEs and normal-quantile intervals. `cov_beta` is the 2x2
/// (beta0, betaA) block of the sandwich covariance.
EstimandReport derive_estimands(const Eigen::Vector2d& beta, const Eigen::Matrix2d& cov_beta,
                                Link link = Link::logistic);

}  // namespace cola
