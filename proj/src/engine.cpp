#include "cola/engine.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

namespace cola {

std::string_view to_string(Protocol protocol) noexcept {
  switch (protocol) {
    case Protocol::OneR:
      return "1R";
    case Protocol::TwoR:
      return "2R";
    case Protocol::TwoRInf:
      return "2R-INF";
    case Protocol::ThreeR:
      return "3R";
  }
  return "?";
}

Protocol parse_protocol(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "1R") return Protocol::OneR;
  if (upper == "2R") return Protocol::TwoR;
  if (upper == "2R-INF") return Protocol::TwoRInf;
  if (upper == "3R") return Protocol::ThreeR;
  throw InputError("unknown protocol '" + std::string(name) + "' (expected 1R, 2R, 2R-INF or 3R)");
}

int round_count(Protocol protocol) noexcept {
  switch (protocol) {
    case Protocol::OneR:
      return 1;
    case Protocol::TwoR:
    case Protocol::TwoRInf:
      return 2;
    case Protocol::ThreeR:
      return 3;
  }
  return 0;
}

CumulantPair CumulantPair::zeros(Eigen::Index dim, bool with_v) {
  CumulantPair c;
  c.h = Matrix::Zero(dim, dim);
  if (with_v) c.v = Matrix::Zero(dim, dim);
  return c;
}

RelayPacket RelayPacket::start(Protocol protocol, std::size_t ps_dim) {
  if (ps_dim < 1) throw InputError("relay: propensity dimension must be >= 1");
  const auto pg = static_cast<Eigen::Index>(ps_dim);
  RelayPacket p;
  p.protocol = protocol;
  p.round = 1;
  p.gamma = Vector::Zero(pg);
  switch (protocol) {
    case Protocol::ThreeR:
    case Protocol::TwoR:
      p.cumulants = CumulantPair::zeros(pg, false);
      break;
    case Protocol::TwoRInf:
      p.beta = Vector::Zero(2);
      p.cumulants = CumulantPair::zeros(pg + 2, false);
      break;
    case Protocol::OneR:
      p.beta = Vector::Zero(2);
      p.cumulants = CumulantPair::zeros(pg + 2, true);
      break;
  }
  return p;
}

namespace {

// Which fields a packet for (protocol, round) carries.
struct Layout {
  bool beta = false;
  bool gamma_global = false;
  bool beta_global = false;
  bool v = false;
  enum class HDim { ps, msm, full } h = HDim::full;
};

Layout layout_for(Protocol protocol, int round) {
  using H = Layout::HDim;
  switch (protocol) {
    case Protocol::ThreeR:
      if (round == 1) return {false, false, false, false, H::ps};
      if (round == 2) return {true, true, false, false, H::msm};
      return {true, true, true, true, H::full};
    case Protocol::TwoR:
      if (round == 1) return {false, false, false, false, H::ps};
      return {true, true, false, true, H::full};
    case Protocol::TwoRInf:
      if (round == 1) return {true, false, false, false, H::full};
      return {true, true, true, true, H::full};
    case Protocol::OneR:
      return {true, false, false, true, H::full};
  }
  return {};
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InputError("relay packet: " + what);
}

std::string where(const RelayPacket& p) {
  return std::string(to_string(p.protocol)) + " round " + std::to_string(p.round);
}

}  // namespace

void validate_packet(const RelayPacket& p) {
  require(p.schema_version == RelayPacket::kSchemaVersion,
          "unsupported schema_version " + std::to_string(p.schema_version));
  require(p.round >= 1 && p.round <= round_count(p.protocol),
          "round " + std::to_string(p.round) + " is not valid for " + std::string(to_string(p.protocol)));
  require(p.site_index >= 0, "site_index must be >= 0");
  require(p.cumulants.n >= 0, "n_cum must be >= 0");
  require(p.cumulants.sites.size() == static_cast<std::size_t>(p.site_index),
          "site_trail length must equal site_index");
  require(p.gamma.size() >= 1 && p.gamma.allFinite(), "theta.gamma must be a finite, non-empty vector");

  const Eigen::Index pg = p.gamma.size();
  const Layout want = layout_for(p.protocol, p.round);
  const std::string at = where(p);
  require(p.beta.has_value() == want.beta, "theta.beta presence is wrong for " + at);
  require(p.gamma_global.has_value() == want.gamma_global, "gamma_global presence is wrong for " + at);
  require(p.beta_global.has_value() == want.beta_global, "beta_global presence is wrong for " + at);
  require(p.cumulants.v.has_value() == want.v, "V_cum presence is wrong for " + at);
  if (p.beta) require(p.beta->size() == 2 && p.beta->allFinite(), "theta.beta must hold 2 finite values");
  if (p.gamma_global) {
    require(p.gamma_global->size() == pg && p.gamma_global->allFinite(),
            "gamma_global must match theta.gamma in length");
  }
  if (p.beta_global) {
    require(p.beta_global->size() == 2 && p.beta_global->allFinite(), "beta_global must hold 2 values");
  }
  Eigen::Index hdim = pg + 2;
  if (want.h == Layout::HDim::ps) hdim = pg;
  if (want.h == Layout::HDim::msm) hdim = 2;
  require(p.cumulants.h.rows() == hdim && p.cumulants.h.cols() == hdim,
          "H_cum must be " + std::to_string(hdim) + "x" + std::to_string(hdim) + " for " + at);
  require(p.cumulants.h.allFinite(), "H_cum must be finite");
  if (p.cumulants.v) {
    require(p.cumulants.v->rows() == pg + 2 && p.cumulants.v->cols() == pg + 2,
            "V_cum must be " + std::to_string(pg + 2) + "x" + std::to_string(pg + 2));
    require(p.cumulants.v->allFinite(), "V_cum must be finite");
  }
}

RelayPacket next_round(const RelayPacket& completed) {
  validate_packet(completed);
  if (completed.is_last_round()) {
    throw InputError("relay: " + where(completed) + " is the final round");
  }
  const Eigen::Index pg = completed.gamma.size();
  RelayPacket next;
  next.protocol = completed.protocol;
  next.round = completed.round + 1;
  next.converged_so_far = completed.converged_so_far;
  switch (completed.protocol) {
    case Protocol::ThreeR:
      if (completed.round == 1) {
        next.gamma = completed.gamma;
        next.gamma_global = completed.gamma;
        next.beta = Vector::Zero(2);
        next.cumulants = CumulantPair::zeros(2, false);
      } else {
        next.gamma = *completed.gamma_global;
        next.gamma_global = *completed.gamma_global;
        next.beta = *completed.beta;
        next.beta_global = *completed.beta;
        next.cumulants = CumulantPair::zeros(pg + 2, true);
      }
      break;
    case Protocol::TwoR:
      next.gamma = completed.gamma;
      next.gamma_global = completed.gamma;
      next.beta = Vector::Zero(2);
      next.cumulants = CumulantPair::zeros(pg + 2, true);
      break;
    case Protocol::TwoRInf:
      next.gamma = completed.gamma;
      next.gamma_global = completed.gamma;
      next.beta = *completed.beta;
      next.beta_global = *completed.beta;
      next.cumulants = CumulantPair::zeros(pg + 2, true);
      break;
    case Protocol::OneR:
      break;
  }
  return next;
}

namespace {

void absorb_h(CumulantPair& c, const Matrix& jacobian_block) { c.h += -jacobian_block; }

}  // namespace

HopResult relay_hop(const SiteDataset& dataset, const RelayPacket& in, const SolverConfig& config) {
  validate_packet(in);
  if (dataset.ps_dim() != in.ps_dim()) {
    throw InputError("relay: site '" + dataset.site_id() + "' has propensity dimension " +
                     std::to_string(dataset.ps_dim()) + " but the packet carries " +
                     std::to_string(in.ps_dim()));
  }
  const auto pg = static_cast<Eigen::Index>(dataset.ps_dim());
  const ModelSpec& spec = config.model;

  HopResult res;
  res.packet = in;
  RelayPacket& out = res.packet;

  auto fail = [&](const SolveOutcome& s) {
    res.ok = false;
    res.failure = s.failure_reason;
    res.packet = in;
    res.packet.converged_so_far = false;
    return res;
  };

  const Vector zero_beta = Vector::Zero(2);
  const auto kind = std::pair{in.protocol, in.round};

  if (kind == std::pair{Protocol::ThreeR, 1} || kind == std::pair{Protocol::TwoR, 1}) {
    const ParameterVector prev{in.gamma, zero_beta};
    SolveOutcome s = incremental_update(dataset, prev, in.cumulants.h, BlockSelector::ps_only(), config);
    res.solves.push_back(s);
    if (!s.converged) return fail(s);
    const auto ev = evaluate(dataset, s.theta_hat, spec, {.with_outer = false});
    absorb_h(out.cumulants, ev.jacobian_sum.topLeftCorner(pg, pg));
    out.gamma = s.theta_hat.gamma;
  } else if (kind == std::pair{Protocol::ThreeR, 2} || kind == std::pair{Protocol::TwoR, 2}) {
    const bool full = in.protocol == Protocol::TwoR;
    const ParameterVector prev{*in.gamma_global, *in.beta};
    // Round-2 updating uses only the beta-beta block of the cumulant.
    const Matrix prior = full ? Matrix(in.cumulants.h.bottomRightCorner(2, 2)) : in.cumulants.h;
    SolveOutcome s =
        incremental_update(dataset, prev, prior, BlockSelector::msm_only(*in.gamma_global), config);
    res.solves.push_back(s);
    if (!s.converged) return fail(s);
    const auto ev = evaluate(dataset, s.theta_hat, spec, {.with_outer = full});
    if (full) {
      absorb_h(out.cumulants, ev.jacobian_sum);
      *out.cumulants.v += ev.outer_sum;
    } else {
      absorb_h(out.cumulants, ev.jacobian_sum.bottomRightCorner(2, 2));
    }
    out.beta = s.theta_hat.beta;
  } else if (kind == std::pair{Protocol::ThreeR, 3} || kind == std::pair{Protocol::TwoRInf, 2}) {
    const ParameterVector theta{*in.gamma_global, *in.beta_global};
    const auto ev = evaluate(dataset, theta, spec);
    absorb_h(out.cumulants, ev.jacobian_sum);
    *out.cumulants.v += ev.outer_sum;
  } else if (kind == std::pair{Protocol::TwoRInf, 1}) {
    const ParameterVector prev{in.gamma, *in.beta};
    SolveOutcome s = incremental_update(dataset, prev, in.cumulants.h, BlockSelector::joint(), config);
    res.solves.push_back(s);
    if (!s.converged) return fail(s);
    const auto ev = evaluate(dataset, s.theta_hat, spec, {.with_outer = false});
    absorb_h(out.cumulants, ev.jacobian_sum);
    out.gamma = s.theta_hat.gamma;
    out.beta = s.theta_hat.beta;
  } else {  // 1R
    const ParameterVector prev{in.gamma, *in.beta};
    SolveOutcome sg = incremental_update(dataset, prev, Matrix(in.cumulants.h.topLeftCorner(pg, pg)),
                                         BlockSelector::ps_only(), config);
    res.solves.push_back(sg);
    if (!sg.converged) return fail(sg);
    // beta_j is updated with the concurrent gamma_j.
    const ParameterVector mid{sg.theta_hat.gamma, *in.beta};
    SolveOutcome sb =
        incremental_update(dataset, mid, Matrix(in.cumulants.h.bottomRightCorner(2, 2)),
                           BlockSelector::msm_only(sg.theta_hat.gamma), config);
    res.solves.push_back(sb);
    if (!sb.converged) return fail(sb);
    const auto ev = evaluate(dataset, sb.theta_hat, spec);
    absorb_h(out.cumulants, ev.jacobian_sum);
    *out.cumulants.v += ev.outer_sum;
    out.gamma = sb.theta_hat.gamma;
    out.beta = sb.theta_hat.beta;
  }

  out.cumulants.n += static_cast<long long>(dataset.size());
  out.cumulants.sites.push_back(dataset.site_id());
  out.site_index += 1;
  return res;
}

ParameterVector final_theta(const RelayPacket& packet) {
  if (!packet.is_last_round()) {
    throw InputError("relay: " + where(packet) + " is not the final round");
  }
  switch (packet.protocol) {
    case Protocol::ThreeR:
    case Protocol::TwoRInf:
      return {*packet.gamma_global, *packet.beta_global};
    case Protocol::TwoR:
      return {*packet.gamma_global, *packet.beta};
    case Protocol::OneR:
      return {packet.gamma, *packet.beta};
  }
  return {};
}

ProtocolResult run_protocol(std::span<SiteAccessor* const> sites, Protocol protocol,
                            const SolverConfig& config, FailurePolicy policy) {
  if (sites.empty()) throw InputError("run_protocol: at least one site is required");
  const std::size_t pg = sites.front()->ps_dim();
  for (const auto* s : sites) {
    if (s->ps_dim() != pg) {
      throw InputError("run_protocol: site '" + s->site_id() + "' has a different covariate dimension");
    }
  }

  ProtocolResult result;
  result.protocol = protocol;
  for (const auto* s : sites) result.site_order.push_back(s->site_id());

  RelayPacket packet = RelayPacket::start(protocol, pg);
  const int rounds = round_count(protocol);
  for (int round = 1; round <= rounds; ++round) {
    for (auto* site : sites) {
      HopResult hop = site->hop(packet, config);
      for (const auto& s : hop.solves) result.per_site_outcomes.push_back({site->site_id(), round, s});
      if (!hop.ok) {
        if (policy == FailurePolicy::fail_fast) {
          result.converged = false;
          result.failure = hop.failure;
          result.failed_site = site->site_id();
          result.failed_round = round;
          return result;
        }
        result.skipped_sites.push_back(site->site_id());
      }
      packet = std::move(hop.packet);
    }
    result.final_packets.push_back(packet);
    if (round < rounds) packet = next_round(packet);
  }

  result.theta_final = final_theta(packet);
  result.cumulants = packet.cumulants;
  try {
    result.covariance = sandwich_covariance(result.cumulants.h, *result.cumulants.v);
  } catch (const SingularSystem&) {
    result.converged = false;
    result.failure = FailureReason::singular_system;
    return result;
  }
  // Under the skip policy the estimate exists but the run is not clean.
  result.converged = result.skipped_sites.empty();
  for (const auto& rec : result.per_site_outcomes) {
    if (!rec.outcome.converged) {
      result.failure = rec.outcome.failure_reason;
      break;
    }
  }
  return result;
}

ProtocolResult run_protocol(std::span<const SiteDataset> datasets, Protocol protocol,
                            std::span<const std::size_t> order, const SolverConfig& config,
                            FailurePolicy policy) {
  std::vector<std::size_t> idx(order.begin(), order.end());
  if (idx.empty()) {
    idx.resize(datasets.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  std::vector<SiteRef> refs;
  refs.reserve(idx.size());
  for (auto i : idx) {
    if (i >= datasets.size()) throw InputError("run_protocol: site order index out of range");
    refs.emplace_back(datasets[i]);
  }
  std::vector<SiteAccessor*> ptrs;
  for (auto& r : refs) ptrs.push_back(&r);
  return run_protocol(std::span<SiteAccessor* const>(ptrs), protocol, config, policy);
}

InferenceResult assemble_inference(const ParameterVector& theta, const Matrix& h_cum,
                                   const Matrix& v_cum, Link link) {
  InferenceResult r;
  r.theta = theta;
  r.covariance = sandwich_covariance(h_cum, v_cum);
  const auto p = r.covariance.rows();
  r.beta_a = theta.beta_a();
  const double var = r.covariance(p - 1, p - 1);
  r.se_beta_a = var >= 0.0 ? std::sqrt(var) : std::numeric_limits<double>::quiet_NaN();
  r.ci95 = {r.beta_a - kZ95 * r.se_beta_a, r.beta_a + kZ95 * r.se_beta_a};
  const Eigen::Vector2d beta = theta.beta;
  const Eigen::Matrix2d cov_beta = r.covariance.bottomRightCorner(2, 2);
  r.estimands = derive_estimands(beta, cov_beta, link);
  r.converged = std::isfinite(r.se_beta_a) && r.se_beta_a > 0.0;
  if (!r.converged) r.failure = FailureReason::singular_system;
  return r;
}

InferenceResult assemble_inference(const ProtocolResult& result, Link link) {
  if (!result.converged || !result.cumulants.v) {
    InferenceResult r;
    r.theta = result.theta_final;
    r.converged = false;
    r.failure = result.failure == FailureReason::none ? FailureReason::singular_system : result.failure;
    return r;
  }
  InferenceResult r = assemble_inference(result.theta_final, result.cumulants.h, *result.cumulants.v, link);
  r.n = result.cumulants.n;
  return r;
}

std::vector<std::size_t> largest_first_order(std::span<const std::size_t> sizes) {
  std::vector<std::size_t> idx(sizes.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
  return idx;
}

std::vector<std::size_t> swap_bad_start(std::span<const std::size_t> order,
                                        std::span<const std::size_t> sizes,
                                        const std::vector<bool>& bad) {
  std::vector<std::size_t> out(order.begin(), order.end());
  if (out.empty() || !bad[out[0]]) return out;
  std::size_t best = 0;
  for (std::size_t k = 1; k < out.size(); ++k) {
    if (bad[out[k]]) continue;
    if (best == 0 || sizes[out[k]] > sizes[out[best]]) best = k;
  }
  if (best != 0) std::swap(out[0], out[best]);
  return out;
}

}  // namespace cola
