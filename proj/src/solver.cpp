#include "cola/solver.hpp"

#include <cmath>
#include <limits>

namespace cola {

void SolverConfig::validate() const {
  if (max_iterations < 1) throw InputError("solver: max_iterations must be >= 1");
  if (!(tolerance > 0.0)) throw InputError("solver: tolerance must be > 0");
  if (!(divergence_bound > 0.0)) throw InputError("solver: divergence_bound must be > 0");
  if (!(regularization_floor >= 0.0)) throw InputError("solver: regularization_floor must be >= 0");
  if (!(model.clamp_bound >= 0.0 && model.clamp_bound < 0.5)) {
    throw InputError("solver: clamp_bound must lie in [0, 0.5)");
  }
}

std::string_view to_string(FailureReason reason) noexcept {
  switch (reason) {
    case FailureReason::none:
      return "none";
    case FailureReason::max_iterations:
      return "max_iterations";
    case FailureReason::singular_system:
      return "singular_system";
    case FailureReason::diverged:
      return "diverged";
    case FailureReason::positivity_violation:
      return "positivity_violation";
  }
  return "unknown";
}

Eigen::Index BlockSelector::offset(std::size_t ps_dim) const noexcept {
  return kind_ == Kind::msm_only ? static_cast<Eigen::Index>(ps_dim) : 0;
}

Eigen::Index BlockSelector::dim(std::size_t ps_dim) const noexcept {
  switch (kind_) {
    case Kind::joint:
      return static_cast<Eigen::Index>(ps_dim) + 2;
    case Kind::ps_only:
      return static_cast<Eigen::Index>(ps_dim);
    case Kind::msm_only:
      return 2;
  }
  return 0;
}

double reciprocal_condition(const Matrix& m) {
  if (m.size() == 0 || !m.allFinite()) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  if (!(smax > 0.0)) return 0.0;
  return smin / smax;
}

namespace {

ParameterVector prepare_start(const SiteDataset& dataset, const BlockSelector& block,
                              const ParameterVector& init) {
  if (init.ps_dim() != dataset.ps_dim() || init.beta.size() != 2) {
    throw InputError("solver: initial parameter dimensions do not match site '" +
                     dataset.site_id() + "'");
  }
  if (!init.is_finite()) {
    throw InputError("solver: initial parameter is not finite");
  }
  ParameterVector theta = init;
  if (block.kind() == BlockSelector::Kind::msm_only) {
    const auto& g = block.fixed_gamma();
    if (!g || static_cast<std::size_t>(g->size()) != dataset.ps_dim()) {
      throw InputError("solver: msm_only block needs a gamma of matching dimension");
    }
    theta.gamma = *g;
  }
  return theta;
}

SolveOutcome finish(const Vector& x, std::size_t pg, int iterations, FailureReason reason,
                    double residual) {
  SolveOutcome out;
  out.theta_hat = ParameterVector::from_stacked(x, pg);
  out.iterations = iterations;
  out.failure_reason = reason;
  out.converged = reason == FailureReason::none;
  out.residual_norm = residual;
  return out;
}

// Newton-Raphson on  F(x) = psi_block(x) + prior (center - x_block).
SolveOutcome newton(const SiteDataset& dataset, const BlockSelector& block,
                    const ParameterVector& init, const Matrix* prior, const SolverConfig& config) {
  config.validate();
  const std::size_t pg = dataset.ps_dim();
  const Eigen::Index off = block.offset(pg);
  const Eigen::Index m = block.dim(pg);
  ParameterVector start = prepare_start(dataset, block, init);
  if (prior != nullptr && (prior->rows() != m || prior->cols() != m)) {
    throw InputError("incremental_update: prior H is " + std::to_string(prior->rows()) + "x" +
                     std::to_string(prior->cols()) + " but the selected block has dimension " +
                     std::to_string(m));
  }

  Vector x = start.stacked();
  const Vector center = x.segment(off, m);
  const EvaluateOptions eval_opts{.with_outer = false};

  auto residual_at = [&](const Vector& theta, Matrix* jac) -> Vector {
    const EstimatingEvaluation ev =
        evaluate(dataset, ParameterVector::from_stacked(theta, pg), config.model, eval_opts);
    Vector f = ev.psi_sum.segment(off, m);
    if (jac != nullptr) *jac = ev.jacobian_sum.block(off, off, m, m);
    if (prior != nullptr) {
      f += *prior * (center - theta.segment(off, m));
      if (jac != nullptr) *jac -= *prior;
    }
    return f;
  };

  double last_step = std::numeric_limits<double>::infinity();
  int iter = 0;
  for (;;) {
    Vector f;
    Matrix jac;
    try {
      f = residual_at(x, &jac);
    } catch (const PositivityViolation&) {
      return finish(x, pg, iter, FailureReason::positivity_violation,
                    std::numeric_limits<double>::quiet_NaN());
    }
    if (!f.allFinite() || !jac.allFinite()) {
      return finish(x, pg, iter, FailureReason::diverged, std::numeric_limits<double>::infinity());
    }
    const double resid = f.cwiseAbs().maxCoeff();
    const double scale = 1.0 + x.cwiseAbs().maxCoeff();
    if (last_step <= config.tolerance && resid <= config.tolerance * scale) {
      return finish(x, pg, iter, FailureReason::none, resid);
    }
    if (iter >= config.max_iterations) {
      return finish(x, pg, iter, FailureReason::max_iterations, resid);
    }

    Eigen::JacobiSVD<Matrix> svd(jac, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double rcond = s(0) > 0.0 ? s(m - 1) / s(0) : 0.0;
    if (!(rcond >= config.regularization_floor) || !(s(0) > 0.0)) {
      return finish(x, pg, iter, FailureReason::singular_system, resid);
    }
    Vector step = svd.solve(-f);

    if (config.damped) {
      for (int halvings = 0; halvings < 10; ++halvings) {
        Vector trial = x;
        trial.segment(off, m) += step;
        double trial_resid = std::numeric_limits<double>::infinity();
        try {
          const Vector ft = residual_at(trial, nullptr);
          if (ft.allFinite()) trial_resid = ft.cwiseAbs().maxCoeff();
        } catch (const PositivityViolation&) {
        }
        if (trial_resid <= resid) break;
        step *= 0.5;
      }
    }

    x.segment(off, m) += step;
    ++iter;
    last_step = step.cwiseAbs().maxCoeff();
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > config.divergence_bound) {
      return finish(x, pg, iter, FailureReason::diverged, resid);
    }
  }
}

}  // namespace

SolveOutcome solve_local(const SiteDataset& dataset, const BlockSelector& block,
                         const ParameterVector& init, const SolverConfig& config) {
  return newton(dataset, block, init, nullptr, config);
}

SolveOutcome incremental_update(const SiteDataset& dataset, const ParameterVector& prev_theta,
                                const Matrix& prior_h, const BlockSelector& block,
                                const SolverConfig& config) {
  return newton(dataset, block, prev_theta, &prior_h, config);
}

SolveOutcome solve_oracle(std::span<const SiteDataset> datasets, const SolverConfig& config) {
  if (datasets.empty()) {
    throw InputError("solve_oracle: at least one dataset is required");
  }
  const SiteDataset pooled = SiteDataset::concatenate(datasets, "pooled");
  return solve_local(pooled, BlockSelector::joint(), ParameterVector::zeros(pooled.ps_dim()), config);
}

Vector block_residual(const SiteDataset& dataset, const ParameterVector& theta,
                      const BlockSelector& block, const Matrix* prior_h,
                      const ParameterVector* prev_theta, const ModelSpec& spec) {
  const std::size_t pg = dataset.ps_dim();
  const Eigen::Index off = block.offset(pg);
  const Eigen::Index m = block.dim(pg);
  const EstimatingEvaluation ev = evaluate(dataset, theta, spec, {.with_outer = false});
  Vector f = ev.psi_sum.segment(off, m);
  if (prior_h != nullptr) {
    if (prev_theta == nullptr) throw InputError("block_residual: prior given without prev_theta");
    f += *prior_h * (prev_theta->stacked().segment(off, m) - theta.stacked().segment(off, m));
  }
  return f;
}

Matrix sandwich_covariance(const Matrix& h_total, const Matrix& v_total, double rcond_floor) {
  if (h_total.rows() != h_total.cols() || v_total.rows() != h_total.rows() ||
      v_total.cols() != h_total.cols()) {
    throw InputError("sandwich_covariance: H and V must be square and of equal dimension");
  }
  if (!(reciprocal_condition(h_total) > rcond_floor)) {
    throw SingularSystem("sandwich_covariance: sensitivity matrix is singular");
  }
  const Matrix h_inv =
      h_total.colPivHouseholderQr().solve(Matrix::Identity(h_total.rows(), h_total.cols()));
  Matrix cov = h_inv * v_total * h_inv.transpose();
  return 0.5 * (cov + cov.transpose()).eval();
}

}  // namespace cola
