#include "cola/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cola {

double expit(double x) noexcept {
  // exp() only ever sees a non-positive argument, so nothing overflows.
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw InputError("logit: probability must lie in (0, 1), got " + std::to_string(p));
  }
  return std::log(p) - std::log1p(-p);
}

double link_mean(Link link, double eta) noexcept {
  switch (link) {
    case Link::logistic:
      return expit(eta);
    case Link::identity:
      return eta;
    case Link::log:
      return std::exp(eta);
  }
  return eta;
}

double link_mean_derivative(Link link, double eta) noexcept {
  switch (link) {
    case Link::logistic: {
      const double mu = expit(eta);
      return mu * (1.0 - mu);
    }
    case Link::identity:
      return 1.0;
    case Link::log:
      return std::exp(eta);
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// SiteDataset

namespace {

bool is_binary(double v) { return v == 0.0 || v == 1.0; }

Matrix build_design(const Matrix& covariates, bool includes_intercept) {
  if (includes_intercept) {
    return covariates;
  }
  Matrix design(covariates.rows(), covariates.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(covariates.cols()) = covariates;
  return design;
}

}  // namespace

SiteDataset SiteDataset::create(Vector outcome, Vector treatment, Matrix covariates,
                                std::string site_id, bool includes_intercept,
                                OutcomeType outcome_type) {
  const auto n = outcome.size();
  if (n < 1) {
    throw InputError("site '" + site_id + "': dataset must contain at least one row");
  }
  if (treatment.size() != n || covariates.rows() != n) {
    std::ostringstream os;
    os << "site '" << site_id << "': row counts differ (outcome " << n << ", treatment "
       << treatment.size() << ", covariates " << covariates.rows() << ")";
    throw InputError(os.str());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!is_binary(treatment(i))) {
      throw InputError("site '" + site_id + "': treatment at row " + std::to_string(i) +
                       " is not in {0,1}");
    }
    if (outcome_type == OutcomeType::binary && !is_binary(outcome(i))) {
      throw InputError("site '" + site_id + "': outcome at row " + std::to_string(i) +
                       " is not in {0,1}");
    }
    if (!std::isfinite(outcome(i))) {
      throw InputError("site '" + site_id + "': non-finite outcome at row " + std::to_string(i));
    }
  }
  if (!covariates.allFinite()) {
    throw InputError("site '" + site_id + "': covariates contain non-finite values");
  }
  if (includes_intercept) {
    if (covariates.cols() < 1 || !(covariates.col(0).array() == 1.0).all()) {
      throw InputError("site '" + site_id + "': includes_intercept set but column 0 is not all ones");
    }
  }

  SiteDataset ds;
  ds.design_ = build_design(covariates, includes_intercept);
  ds.outcome_ = std::move(outcome);
  ds.treatment_ = std::move(treatment);
  ds.covariates_ = std::move(covariates);
  ds.site_id_ = std::move(site_id);
  ds.includes_intercept_ = includes_intercept;
  ds.outcome_type_ = outcome_type;
  return ds;
}

SiteDataset SiteDataset::concatenate(std::span<const SiteDataset> parts, std::string site_id) {
  if (parts.empty()) {
    throw InputError("concatenate: no datasets given");
  }
  const auto& first = parts.front();
  Eigen::Index rows = 0;
  for (const auto& part : parts) {
    if (part.covariate_dim() != first.covariate_dim() ||
        part.includes_intercept() != first.includes_intercept() ||
        part.outcome_type() != first.outcome_type()) {
      throw InputError("concatenate: site '" + part.site_id() +
                       "' has a different covariate layout than '" + first.site_id() + "'");
    }
    rows += static_cast<Eigen::Index>(part.size());
  }
  Vector y(rows);
  Vector a(rows);
  Matrix x(rows, static_cast<Eigen::Index>(first.covariate_dim()));
  Eigen::Index offset = 0;
  for (const auto& part : parts) {
    const auto n = static_cast<Eigen::Index>(part.size());
    y.segment(offset, n) = part.outcome();
    a.segment(offset, n) = part.treatment();
    x.middleRows(offset, n) = part.covariates();
    offset += n;
  }
  return create(std::move(y), std::move(a), std::move(x), std::move(site_id),
                first.includes_intercept(), first.outcome_type());
}

SiteDataset SiteDataset::slice(std::size_t begin, std::size_t count, std::string site_id) const {
  if (begin + count > size()) {
    throw InputError("slice: range exceeds dataset size");
  }
  const auto b = static_cast<Eigen::Index>(begin);
  const auto c = static_cast<Eigen::Index>(count);
  return create(outcome_.segment(b, c), treatment_.segment(b, c), covariates_.middleRows(b, c),
                std::move(site_id), includes_intercept_, outcome_type_);
}

SiteDataset SiteDataset::subset(std::span<const std::size_t> rows, std::string site_id) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Vector y(m);
  Vector a(m);
  Matrix x(m, covariates_.cols());
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = rows[static_cast<std::size_t>(k)];
    if (i >= size()) {
      throw InputError("subset: row index out of range");
    }
    const auto ii = static_cast<Eigen::Index>(i);
    y(k) = outcome_(ii);
    a(k) = treatment_(ii);
    x.row(k) = covariates_.row(ii);
  }
  return create(std::move(y), std::move(a), std::move(x), std::move(site_id), includes_intercept_,
                outcome_type_);
}

double SiteDataset::case_rate() const noexcept { return outcome_.mean(); }

// ---------------------------------------------------------------------------
// ParameterVector

ParameterVector ParameterVector::zeros(std::size_t ps_dim) {
  return ParameterVector{Vector::Zero(static_cast<Eigen::Index>(ps_dim)), Vector::Zero(2)};
}

ParameterVector ParameterVector::from_stacked(const Vector& theta, std::size_t ps_dim) {
  const auto pg = static_cast<Eigen::Index>(ps_dim);
  if (theta.size() != pg + 2) {
    throw InputError("stacked parameter has length " + std::to_string(theta.size()) +
                     ", expected " + std::to_string(pg + 2));
  }
  return ParameterVector{theta.head(pg), theta.tail(2)};
}

Vector ParameterVector::stacked() const {
  Vector theta(gamma.size() + beta.size());
  theta << gamma, beta;
  return theta;
}

bool ParameterVector::is_finite() const noexcept { return gamma.allFinite() && beta.allFinite(); }

double ParameterVector::max_abs() const noexcept {
  double m = 0.0;
  if (gamma.size() > 0) m = gamma.cwiseAbs().maxCoeff();
  if (beta.size() > 0) m = std::max(m, beta.cwiseAbs().maxCoeff());
  return m;
}

bool operator==(const ParameterVector& lhs, const ParameterVector& rhs) {
  return lhs.gamma.size() == rhs.gamma.size() && lhs.beta.size() == rhs.beta.size() &&
         (lhs.gamma.array() == rhs.gamma.array()).all() &&
         (lhs.beta.array() == rhs.beta.array()).all();
}

EstimatingEvaluation& EstimatingEvaluation::operator+=(const EstimatingEvaluation& other) {
  if (n == 0 && psi_sum.size() == 0) {
    *this = other;
    return *this;
  }
  psi_sum += other.psi_sum;
  jacobian_sum += other.jacobian_sum;
  if (outer_sum.size() > 0 && other.outer_sum.size() > 0) {
    outer_sum += other.outer_sum;
  } else {
    outer_sum.resize(0, 0);
  }
  for (auto r : other.clamped_rows) clamped_rows.push_back(r + n);
  n += other.n;
  return *this;
}

// ---------------------------------------------------------------------------
// Estimating functions

double propensity_score(const Eigen::Ref<const Vector>& x_row, const Eigen::Ref<const Vector>& gamma) {
  if (x_row.size() != gamma.size()) {
    throw InputError("propensity_score: design row has length " + std::to_string(x_row.size()) +
                     " but gamma has length " + std::to_string(gamma.size()));
  }
  return expit(x_row.dot(gamma));
}

double iptw_weight(double a, double e, std::size_t row) {
  if (!(e > 0.0 && e < 1.0)) {
    throw PositivityViolation("positivity violation at row " + std::to_string(row) +
                                  ": propensity " + std::to_string(e),
                              {row});
  }
  return a / e + (1.0 - a) / (1.0 - e);
}

namespace {

// Per-row pieces shared by psi_stacked() and evaluate().
struct RowTerms {
  double e = 0.0;          // raw propensity
  double weight = 0.0;     // IPTW weight at the (possibly clamped) propensity
  double dweight = 0.0;    // d weight / d (x^T gamma); zero when clamped
  double residual = 0.0;   // y - g(b0 + bA a)
  double dmean = 0.0;      // g'(b0 + bA a)
  bool clamped = false;
};

RowTerms row_terms(double y, double a, double linear_ps, const ParameterVector& theta,
                   const ModelSpec& spec, std::size_t row) {
  RowTerms t;
  t.e = expit(linear_ps);
  double ew = t.e;
  const double lo = spec.clamp_bound;
  const double hi = 1.0 - spec.clamp_bound;
  if (ew < lo || ew > hi) {
    if (spec.positivity == PositivityPolicy::strict) {
      throw PositivityViolation("positivity violation at row " + std::to_string(row), {row});
    }
    ew = std::clamp(ew, lo, hi);
    t.clamped = true;
  }
  t.weight = iptw_weight(a, ew, row);
  if (!t.clamped) {
    // d/de [a/e + (1-a)/(1-e)] * e(1-e)
    t.dweight = -a * (1.0 - ew) / ew + (1.0 - a) * ew / (1.0 - ew);
  }
  const double eta = theta.beta(0) + theta.beta(1) * a;
  t.residual = y - link_mean(spec.link, eta);
  t.dmean = link_mean_derivative(spec.link, eta);
  return t;
}

}  // namespace

Vector psi_stacked(double y, double a, const Eigen::Ref<const Vector>& x_row,
                   const ParameterVector& theta, const ModelSpec& spec) {
  if (x_row.size() != theta.gamma.size()) {
    throw InputError("psi_stacked: design row and gamma lengths differ");
  }
  const auto pg = theta.gamma.size();
  const RowTerms t = row_terms(y, a, x_row.dot(theta.gamma), theta, spec, 0);
  Vector psi(pg + 2);
  psi.head(pg) = x_row * (a - t.e);
  psi(pg) = t.weight * t.residual;
  psi(pg + 1) = a * t.weight * t.residual;
  return psi;
}

EstimatingEvaluation evaluate(const SiteDataset& dataset, const ParameterVector& theta,
                              const ModelSpec& spec, EvaluateOptions options) {
  const auto pg = static_cast<Eigen::Index>(dataset.ps_dim());
  if (theta.gamma.size() != pg || theta.beta.size() != 2) {
    throw InputError("evaluate: parameter dimensions do not match site '" + dataset.site_id() + "'");
  }
  const auto p = pg + 2;
  const Matrix& x = dataset.design();
  const Vector& y = dataset.outcome();
  const Vector& a = dataset.treatment();

  EstimatingEvaluation out;
  out.psi_sum = Vector::Zero(p);
  out.jacobian_sum = Matrix::Zero(p, p);
  if (options.with_outer) out.outer_sum = Matrix::Zero(p, p);
  out.n = dataset.size();

  const Vector linear_ps = x * theta.gamma;
  Vector psi(p);
  std::vector<std::size_t> violations;

  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto row = static_cast<std::size_t>(i);
    RowTerms t;
    try {
      t = row_terms(y(i), a(i), linear_ps(i), theta, spec, row);
    } catch (const PositivityViolation&) {
      violations.push_back(row);
      continue;
    }
    if (t.clamped) out.clamped_rows.push_back(row);

    const double ai = a(i);
    const double ps_resid = ai - t.e;
    const double ps_curv = t.e * (1.0 - t.e);
    for (Eigen::Index k = 0; k < pg; ++k) psi(k) = x(i, k) * ps_resid;
    const double wr = t.weight * t.residual;
    psi(pg) = wr;
    psi(pg + 1) = ai * wr;
    out.psi_sum += psi;

    auto& jac = out.jacobian_sum;
    // d psi_ps / d gamma
    for (Eigen::Index c = 0; c < pg; ++c) {
      const double xc = ps_curv * x(i, c);
      for (Eigen::Index r = 0; r < pg; ++r) jac(r, c) -= x(i, r) * xc;
    }
    // d psi_msm / d gamma (the upper-right block stays zero)
    const double cross = t.residual * t.dweight;
    for (Eigen::Index c = 0; c < pg; ++c) {
      jac(pg, c) += cross * x(i, c);
      jac(pg + 1, c) += ai * cross * x(i, c);
    }
    // d psi_msm / d beta
    const double curv = t.weight * t.dmean;
    jac(pg, pg) -= curv;
    jac(pg, pg + 1) -= curv * ai;
    jac(pg + 1, pg) -= curv * ai;
    jac(pg + 1, pg + 1) -= curv * ai * ai;

    if (options.with_outer) {
      auto& outer = out.outer_sum;
      for (Eigen::Index c = 0; c < p; ++c) {
        for (Eigen::Index r = 0; r <= c; ++r) outer(r, c) += psi(r) * psi(c);
      }
    }
  }

  if (!violations.empty()) {
    std::ostringstream os;
    os << "site '" << dataset.site_id() << "': positivity violation at " << violations.size()
       << " row(s):";
    for (std::size_t k = 0; k < violations.size() && k < 20; ++k) os << ' ' << violations[k];
    if (violations.size() > 20) os << " ...";
    throw PositivityViolation(os.str(), std::move(violations));
  }

  if (options.with_outer) {
    auto& outer = out.outer_sum;
    for (Eigen::Index c = 0; c < p; ++c) {
      for (Eigen::Index r = c + 1; r < p; ++r) outer(r, c) = outer(c, r);
    }
  }
  return out;
}

}  // namespace cola
