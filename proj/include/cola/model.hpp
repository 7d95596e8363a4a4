// Data model and stacked IPTW estimating functions.
//
// The stacked estimating function for one subject is
//
//   psi(theta) = ( x (a - e(x; gamma))                          )   p_gamma rows
//                ( (1, a)^T w(a, x; gamma) (y - g(b0 + bA a)) )   2 rows
//
// where e is the logistic propensity score and w the inverse probability of
// treatment weight. Sums over a site are the only quantities that ever leave
// that site.
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cola {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Malformed or inconsistent input (bad CSV cell, dimension mismatch, ...).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An estimated propensity of exactly 0 or 1 was fed into a weight.
class PositivityViolation : public std::runtime_error {
 public:
  PositivityViolation(const std::string& what, std::vector<std::size_t> rows)
      : std::runtime_error(what), rows_(std::move(rows)) {}
  const std::vector<std::size_t>& rows() const noexcept { return rows_; }

 private:
  std::vector<std::size_t> rows_;
};

/// Link of the marginal structural model. Logistic is the binary-outcome case.
enum class Link { logistic, identity, log };

enum class OutcomeType { binary, continuous };

/// How evaluate() treats propensities near 0 or 1.
enum class PositivityPolicy {
  clamp,   ///< clamp e into [bound, 1 - bound] before weighting; record the row
  strict,  ///< throw PositivityViolation listing every offending row
};

struct ModelSpec {
  Link link = Link::logistic;
  PositivityPolicy positivity = PositivityPolicy::clamp;
  double clamp_bound = 1e-10;
};

/// Numerically stable inverse logit.
double expit(double x) noexcept;
double logit(double p);

/// Mean function g and its derivative for a link.
double link_mean(Link link, double eta) noexcept;
double link_mean_derivative(Link link, double eta) noexcept;

/// Subject-level data held by one site. Immutable after construction.
class SiteDataset {
 public:
  /// Validates every invariant; throws InputError on violation. The propensity
  /// design prepends a column of ones unless `includes_intercept` is set, in
  /// which case column 0 of `covariates` must be identically 1.
  static SiteDataset create(Vector outcome, Vector treatment, Matrix covariates,
                            std::string site_id, bool includes_intercept = false,
                            OutcomeType outcome_type = OutcomeType::binary);

  /// Row-order concatenation. All parts must share covariate layout.
  static SiteDataset concatenate(std::span<const SiteDataset> parts, std::string site_id);

  SiteDataset slice(std::size_t begin, std::size_t count, std::string site_id) const;
  SiteDataset subset(std::span<const std::size_t> rows, std::string site_id) const;

  std::size_t size() const noexcept { return static_cast<std::size_t>(outcome_.size()); }
  /// Length of gamma (covariates plus intercept).
  std::size_t ps_dim() const noexcept { return static_cast<std::size_t>(design_.cols()); }
  /// Length of the stacked parameter vector.
  std::size_t param_dim() const noexcept { return ps_dim() + 2; }
  std::size_t covariate_dim() const noexcept { return static_cast<std::size_t>(covariates_.cols()); }

  const Vector& outcome() const noexcept { return outcome_; }
  const Vector& treatment() const noexcept { return treatment_; }
  const Matrix& covariates() const noexcept { return covariates_; }
  /// Propensity design matrix, intercept first.
  const Matrix& design() const noexcept { return design_; }
  const std::string& site_id() const noexcept { return site_id_; }
  bool includes_intercept() const noexcept { return includes_intercept_; }
  OutcomeType outcome_type() const noexcept { return outcome_type_; }

  double case_rate() const noexcept;

 private:
  SiteDataset() = default;

  Vector outcome_;
  Vector treatment_;
  Matrix covariates_;
  Matrix design_;
  std::string site_id_;
  bool includes_intercept_ = false;
  OutcomeType outcome_type_ = OutcomeType::binary;
};

/// theta = (gamma, beta) with beta = (beta0, betaA).
struct ParameterVector {
  Vector gamma;
  Vector beta = Vector::Zero(2);

  static ParameterVector zeros(std::size_t ps_dim);
  static ParameterVector from_stacked(const Vector& theta, std::size_t ps_dim);

  std::size_t ps_dim() const noexcept { return static_cast<std::size_t>(gamma.size()); }
  std::size_t size() const noexcept { return ps_dim() + 2; }
  Vector stacked() const;
  bool is_finite() const noexcept;
  double max_abs() const noexcept;
  double beta0() const { return beta(0); }
  double beta_a() const { return beta(1); }

  friend bool operator==(const ParameterVector& lhs, const ParameterVector& rhs);
};

/// Site-level sums of the estimating function, its Jacobian and outer products.
struct EstimatingEvaluation {
  Vector psi_sum;
  Matrix jacobian_sum;  ///< sum of d psi_i / d theta^T
  Matrix outer_sum;     ///< sum of psi_i psi_i^T (empty if not requested)
  std::size_t n = 0;
  std::vector<std::size_t> clamped_rows;

  /// H = -jacobian_sum.
  Matrix sensitivity() const { return -jacobian_sum; }
  const Matrix& variability() const noexcept { return outer_sum; }

  EstimatingEvaluation& operator+=(const EstimatingEvaluation& other);
};

struct EvaluateOptions {
  bool with_outer = true;
};

double propensity_score(const Eigen::Ref<const Vector>& x_row, const Eigen::Ref<const Vector>& gamma);

/// a / e + (1 - a) / (1 - e). Throws PositivityViolation if e is 0 or 1 (or
/// outside [0, 1]) in floating point; `row` is carried in the error.
double iptw_weight(double a, double e, std::size_t row = 0);

/// Stacked estimating function for a single subject. `x_row` is a design row
/// (intercept included).
Vector psi_stacked(double y, double a, const Eigen::Ref<const Vector>& x_row,
                   const ParameterVector& theta, const ModelSpec& spec = {});

/// Sums over the dataset in row order with analytic derivatives.
EstimatingEvaluation evaluate(const SiteDataset& dataset, const ParameterVector& theta,
                              const ModelSpec& spec = {}, EvaluateOptions options = {});

}  // namespace cola
