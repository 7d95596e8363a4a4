// Newton-Raphson for the stacked estimating equations, in local, pooled and
// incremental (prior-regularised) form, plus sandwich covariance assembly.
#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>

#include "cola/model.hpp"

namespace cola {

struct SolverConfig {
  int max_iterations = 50;
  /// Max-norm threshold on the Newton step.
  double tolerance = 1e-8;
  /// Max-norm bound on theta; exceeding it is divergence.
  double divergence_bound = 1e4;
  /// Minimum reciprocal condition number of the Newton system.
  double regularization_floor = 1e-12;
  /// Halve the step (up to 10 times) when the residual grows. Off by default.
  bool damped = false;
  ModelSpec model{};

  /// Throws InputError when a field is out of range.
  void validate() const;
};

enum class FailureReason { none, max_iterations, singular_system, diverged, positivity_violation };

std::string_view to_string(FailureReason reason) noexcept;

struct SolveOutcome {
  ParameterVector theta_hat;
  int iterations = 0;
  bool converged = false;
  FailureReason failure_reason = FailureReason::none;
  /// Max-norm of the selected equation block at theta_hat.
  double residual_norm = 0.0;
};

/// Which block of the stacked system a solve targets.
class BlockSelector {
 public:
  enum class Kind { joint, ps_only, msm_only };

  static BlockSelector joint() { return BlockSelector(Kind::joint, std::nullopt); }
  static BlockSelector ps_only() { return BlockSelector(Kind::ps_only, std::nullopt); }
  /// Solve beta with gamma held at `gamma`.
  static BlockSelector msm_only(Vector gamma) { return BlockSelector(Kind::msm_only, std::move(gamma)); }

  Kind kind() const noexcept { return kind_; }
  const std::optional<Vector>& fixed_gamma() const noexcept { return gamma_; }

  /// Offset and length of the block inside the stacked vector.
  Eigen::Index offset(std::size_t ps_dim) const noexcept;
  Eigen::Index dim(std::size_t ps_dim) const noexcept;

 private:
  BlockSelector(Kind kind, std::optional<Vector> gamma) : kind_(kind), gamma_(std::move(gamma)) {}
  Kind kind_;
  std::optional<Vector> gamma_;
};

class SingularSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Root of the selected block of sum_i psi_i(theta) = 0 starting at `init`.
SolveOutcome solve_local(const SiteDataset& dataset, const BlockSelector& block,
                         const ParameterVector& init, const SolverConfig& config = {});

/// Root of  psi_block(theta) + prior_h (prev_block - theta_block) = 0,
/// Newton jacobian (J_block - prior_h), warm-started at `prev_theta`.
/// `prior_h` must be square with the block's dimension.
SolveOutcome incremental_update(const SiteDataset& dataset, const ParameterVector& prev_theta,
                                const Matrix& prior_h, const BlockSelector& block,
                                const SolverConfig& config = {});

/// Joint root on the row-order concatenation of all datasets, started at zero.
SolveOutcome solve_oracle(std::span<const SiteDataset> datasets, const SolverConfig& config = {});

/// Residual of the (incremental) block equation at theta, recomputed from scratch.
Vector block_residual(const SiteDataset& dataset, const ParameterVector& theta,
                      const BlockSelector& block, const Matrix* prior_h = nullptr,
                      const ParameterVector* prev_theta = nullptr, const ModelSpec& spec = {});

/// H^{-1} V H^{-T}, symmetrised. Finite-sample covariance of theta-hat.
/// Throws SingularSystem if H is not invertible at working precision.
Matrix sandwich_covariance(const Matrix& h_total, const Matrix& v_total,
                           double rcond_floor = 1e-14);

/// sigma_min / sigma_max; 0 for singular or non-finite input.
double reciprocal_condition(const Matrix& m);

}  // namespace cola
