// Sequential summary-statistic relay.
//
// A site receives a RelayPacket, solves the incremental estimating equation
//
//   psi_k(theta_k) + sum_{j<k} H_j (theta_{k-1} - theta_k) = 0
//
// on its own rows, adds its H (and V) contribution to the cumulants and hands
// the packet on. Nothing but packet fields crosses a site boundary.
//
// Protocols and the content of their rounds:
//
//   3R      R1 gamma (p_gamma H) | R2 beta at gamma_K (2x2 H) | R3 H, V at (gamma_K, beta_K)
//   2R      R1 gamma (p_gamma H) | R2 beta at gamma_K, H and V at (gamma_K, beta_j)
//   2R-INF  R1 joint theta (p H) | R2 H, V at theta_K
//   1R      R1 gamma_j then beta_j at gamma_j, H and V at (gamma_j, beta_j)
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cola/estimands.hpp"
#include "cola/model.hpp"
#include "cola/solver.hpp"

namespace cola {

enum class Protocol { OneR, TwoR, TwoRInf, ThreeR };

/// Wire names: "1R", "2R", "2R-INF", "3R".
std::string_view to_string(Protocol protocol) noexcept;
/// Accepts wire names case-insensitively ("3r", "2r-inf", ...).
Protocol parse_protocol(std::string_view name);
int round_count(Protocol protocol) noexcept;

/// Running sums of site sensitivity (H) and variability (V) matrices.
struct CumulantPair {
  Matrix h;
  std::optional<Matrix> v;
  long long n = 0;
  std::vector<std::string> sites;

  static CumulantPair zeros(Eigen::Index dim, bool with_v);
};

/// The only object that crosses site boundaries.
struct RelayPacket {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  Protocol protocol = Protocol::ThreeR;
  int round = 1;
  /// Hops completed in the current round.
  int site_index = 0;
  Vector gamma;
  std::optional<Vector> beta;
  std::optional<Vector> gamma_global;
  std::optional<Vector> beta_global;
  CumulantPair cumulants;
  bool converged_so_far = true;

  /// Round-1 packet for a run with propensity dimension `ps_dim`.
  static RelayPacket start(Protocol protocol, std::size_t ps_dim);

  std::size_t ps_dim() const noexcept { return static_cast<std::size_t>(gamma.size()); }
  bool is_last_round() const noexcept { return round == round_count(protocol); }
};

/// Throws InputError when field presence or matrix shapes disagree with
/// (protocol, round).
void validate_packet(const RelayPacket& packet);

/// Packet that opens the next round after a completed one.
RelayPacket next_round(const RelayPacket& completed);

struct HopResult {
  RelayPacket packet;
  std::vector<SolveOutcome> solves;
  bool ok = true;
  FailureReason failure = FailureReason::none;
};

/// One site's step of the relay, computed from that site's rows only.
HopResult relay_hop(const SiteDataset& dataset, const RelayPacket& in, const SolverConfig& config);

/// The engine's view of a site: it can only be asked to process a packet.
class SiteAccessor {
 public:
  virtual ~SiteAccessor() = default;
  virtual const std::string& site_id() const = 0;
  virtual std::size_t ps_dim() const = 0;
  virtual HopResult hop(const RelayPacket& in, const SolverConfig& config) = 0;
};

/// In-process site backed by a dataset it owns.
class LocalSite final : public SiteAccessor {
 public:
  explicit LocalSite(SiteDataset dataset) : dataset_(std::move(dataset)) {}
  const std::string& site_id() const override { return dataset_.site_id(); }
  std::size_t ps_dim() const override { return dataset_.ps_dim(); }
  HopResult hop(const RelayPacket& in, const SolverConfig& config) override {
    return relay_hop(dataset_, in, config);
  }

 private:
  SiteDataset dataset_;
};

/// Non-owning variant for datasets that outlive the run.
class SiteRef final : public SiteAccessor {
 public:
  explicit SiteRef(const SiteDataset& dataset) : dataset_(&dataset) {}
  const std::string& site_id() const override { return dataset_->site_id(); }
  std::size_t ps_dim() const override { return dataset_->ps_dim(); }
  HopResult hop(const RelayPacket& in, const SolverConfig& config) override {
    return relay_hop(*dataset_, in, config);
  }

 private:
  const SiteDataset* dataset_;
};

enum class FailurePolicy { fail_fast, skip };

struct SiteSolveRecord {
  std::string site_id;
  int round = 0;
  SolveOutcome outcome;
};

struct ProtocolResult {
  Protocol protocol = Protocol::ThreeR;
  bool converged = false;
  FailureReason failure = FailureReason::none;
  std::optional<std::string> failed_site;
  int failed_round = 0;
  std::vector<std::string> skipped_sites;

  ParameterVector theta_final;
  CumulantPair cumulants;  ///< final-round H and V (p x p)
  Matrix covariance;       ///< empty unless converged
  std::vector<SiteSolveRecord> per_site_outcomes;
  std::vector<std::string> site_order;
  std::vector<RelayPacket> final_packets;  ///< last packet of each round
};

ProtocolResult run_protocol(std::span<SiteAccessor* const> sites, Protocol protocol,
                            const SolverConfig& config = {},
                            FailurePolicy policy = FailurePolicy::fail_fast);

/// Convenience: runs datasets in the given order (identity when empty).
ProtocolResult run_protocol(std::span<const SiteDataset> datasets, Protocol protocol,
                            std::span<const std::size_t> order, const SolverConfig& config = {},
                            FailurePolicy policy = FailurePolicy::fail_fast);

struct InferenceResult {
  ParameterVector theta;
  Matrix covariance;
  double beta_a = 0.0;
  double se_beta_a = 0.0;
  Interval ci95{};
  EstimandReport estimands;
  bool converged = false;
  FailureReason failure = FailureReason::none;
  long long n = 0;
};

/// Sandwich inference from final theta and H/V cumulants.
InferenceResult assemble_inference(const ParameterVector& theta, const Matrix& h_cum,
                                   const Matrix& v_cum, Link link = Link::logistic);
InferenceResult assemble_inference(const ProtocolResult& result, Link link = Link::logistic);

/// Theta carried by a final-round packet (globals where the protocol fixes them).
ParameterVector final_theta(const RelayPacket& packet);

// Site ordering helpers.

/// Indices sorted by decreasing size; ties keep input order.
std::vector<std::size_t> largest_first_order(std::span<const std::size_t> sizes);

/// If the starting site is flagged bad, swap it with the largest later good
/// site (earliest on ties). Orders that start with a good site are returned
/// unchanged.
std::vector<std::size_t> swap_bad_start(std::span<const std::size_t> order,
                                        std::span<const std::size_t> sizes,
                                        const std::vector<bool>& bad);

}  // namespace cola
