#include "cola/estimands.hpp"

#include <cmath>

namespace cola {

namespace {

Interval normal_ci(double point, double se) { return {point - kZ95 * se, point + kZ95 * se}; }

double delta_se(const Eigen::Vector2d& grad, const Eigen::Matrix2d& cov) {
  const double var = grad.dot(cov * grad);
  return var > 0.0 ? std::sqrt(var) : 0.0;
}

}  // namespace

EstimandGradients estimand_gradients(const Eigen::Vector2d& beta, Link link) {
  const double eta1 = beta(0) + beta(1);
  const double eta0 = beta(0);
  const double mu1 = link_mean(link, eta1);
  const double mu0 = link_mean(link, eta0);
  const double d1 = link_mean_derivative(link, eta1);
  const double d0 = link_mean_derivative(link, eta0);
  // d mu1 / d beta = d1 * (1, 1); d mu0 / d beta = d0 * (1, 0)
  EstimandGradients g;
  g.delta_d = Eigen::Vector2d(d1 - d0, d1);
  g.log_rr = Eigen::Vector2d(d1 / mu1 - d0 / mu0, d1 / mu1);
  if (link == Link::logistic) {
    g.log_or = Eigen::Vector2d(0.0, 1.0);
  } else {
    const double s1 = d1 / (mu1 * (1.0 - mu1));
    const double s0 = d0 / (mu0 * (1.0 - mu0));
    g.log_or = Eigen::Vector2d(s1 - s0, s1);
  }
  return g;
}

EstimandReport derive_estimands(const Eigen::Vector2d& beta, const Eigen::Matrix2d& cov_beta,
                                Link link) {
  EstimandReport r;
  r.mu1 = link_mean(link, beta(0) + beta(1));
  r.mu0 = link_mean(link, beta(0));
  r.delta_d = r.mu1 - r.mu0;
  r.log_rr = std::log(r.mu1) - std::log(r.mu0);
  // On the logit scale the treatment slope is the log odds ratio itself.
  r.log_or = link == Link::logistic ? beta(1) : logit(r.mu1) - logit(r.mu0);

  const EstimandGradients g = estimand_gradients(beta, link);
  r.se_delta_d = delta_se(g.delta_d, cov_beta);
  r.se_log_rr = delta_se(g.log_rr, cov_beta);
  r.se_log_or = delta_se(g.log_or, cov_beta);

  r.ci95_delta_d = normal_ci(r.delta_d, r.se_delta_d);
  r.ci95_log_rr = normal_ci(r.log_rr, r.se_log_rr);
  r.ci95_log_or = normal_ci(r.log_or, r.se_log_or);
  r.or_point = std::exp(r.log_or);
  r.ci95_or = {std::exp(r.ci95_log_or.first), std::exp(r.ci95_log_or.second)};
  return r;
}

}  // namespace cola
