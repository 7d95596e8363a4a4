#include "cola/simgen.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "cola/constants.hpp"
#include "cola/csv.hpp"
#include "cola/engine.hpp"
#include "cola/rng.hpp"
#include "json.hpp"

namespace cola {

namespace {

constexpr auto tag(Stream s) { return static_cast<std::uint64_t>(s); }

void draw_covariates(Rng& rng, const GenerativeModel& m, Eigen::Ref<Vector> x) {
  x(0) = rng.normal();
  x(1) = rng.normal();
  x(2) = rng.normal();
  x(3) = rng.bernoulli(m.p_x4) ? 1.0 : 0.0;
  x(4) = rng.bernoulli(m.p_x5) ? 1.0 : 0.0;
}

}  // namespace

double GenerativeModel::treatment_probability(const Eigen::Ref<const Vector>& x) const {
  return expit(gamma(0) + gamma.tail(gamma.size() - 1).dot(x));
}

double GenerativeModel::outcome_probability(double a, const Eigen::Ref<const Vector>& x) const {
  return expit(outcome_intercept + outcome_treatment * a + outcome_covariates.dot(x));
}

Population generate_population(std::size_t n, std::uint64_t seed, const GenerativeModel& model) {
  if (n < 1) throw InputError("generate_population: n must be >= 1");
  Rng cov(derive_seed(seed, tag(Stream::covariates)));
  Rng trt(derive_seed(seed, tag(Stream::treatment)));
  Rng out(derive_seed(seed, tag(Stream::outcome)));
  const auto rows = static_cast<Eigen::Index>(n);
  Population pop{Vector(rows), Vector(rows), Matrix(rows, 5)};
  Vector x(5);
  for (Eigen::Index i = 0; i < rows; ++i) {
    draw_covariates(cov, model, x);
    pop.x.row(i) = x.transpose();
    pop.a(i) = trt.bernoulli(model.treatment_probability(x)) ? 1.0 : 0.0;
    pop.y(i) = out.bernoulli(model.outcome_probability(pop.a(i), x)) ? 1.0 : 0.0;
  }
  return pop;
}

AssignmentParams solve_assignment_params(double target_n, double target_case_rate,
                                         double overall_case_rate, double n_total) {
  if (!(n_total > 0.0) || !(target_n > 0.0) || !(target_n < n_total)) {
    throw InfeasibleTarget("assignment: target size must lie in (0, n_total)");
  }
  if (!(target_case_rate > 0.0 && target_case_rate < 1.0) ||
      !(overall_case_rate > 0.0 && overall_case_rate < 1.0)) {
    throw InfeasibleTarget("assignment: case rates must lie in (0, 1)");
  }
  // Written so that equal rates give exactly equal probabilities (b = 0).
  const double share = target_n / n_total;
  AssignmentParams p;
  p.p_case = share * (target_case_rate / overall_case_rate);
  p.p_control = share * ((1.0 - target_case_rate) / (1.0 - overall_case_rate));
  if (!(p.p_case > 0.0 && p.p_case < 1.0) || !(p.p_control > 0.0 && p.p_control < 1.0)) {
    throw InfeasibleTarget("assignment: targets need a selection probability outside (0, 1) (case " +
                           format_double(p.p_case) + ", control " + format_double(p.p_control) + ")");
  }
  p.a = logit(p.p_control);
  p.b = p.p_case == p.p_control ? 0.0 : logit(p.p_case) - p.a;
  return p;
}

MonteCarloTruth monte_carlo_truth(std::size_t samples, std::uint64_t seed, const GenerativeModel& model) {
  if (samples < 1) throw InputError("monte_carlo_truth: samples must be >= 1");
  Rng cov(derive_seed(seed, tag(Stream::covariates)));
  Vector x(5);
  // Kahan-free running sums are fine at double precision for 1e7 terms of O(1).
  long double s1 = 0.0L, s0 = 0.0L, sy = 0.0L;
  for (std::size_t i = 0; i < samples; ++i) {
    draw_covariates(cov, model, x);
    const double m1 = model.outcome_probability(1.0, x);
    const double m0 = model.outcome_probability(0.0, x);
    const double e = model.treatment_probability(x);
    s1 += m1;
    s0 += m0;
    sy += e * m1 + (1.0 - e) * m0;
  }
  MonteCarloTruth t;
  t.mu1 = static_cast<double>(s1 / samples);
  t.mu0 = static_cast<double>(s0 / samples);
  t.case_rate = static_cast<double>(sy / samples);
  t.log_or = logit(t.mu1) - logit(t.mu0);
  return t;
}

void ScenarioConfig::validate() const {
  if (scenario_id < 0) throw InputError("scenario: id must be non-negative");
  if (k_sites < 1) throw InputError("scenario: at least one site is required");
  if (layout == SiteLayout::outcome_dependent) {
    if (k_sites < 5) throw InputError("scenario: the outcome-dependent layout needs at least 5 sites");
    const std::size_t expected = 360 + extra_site_size * (k_sites - 5);
    if (population != expected) {
      throw InputError("scenario: population must be " + std::to_string(expected) + " for " +
                       std::to_string(k_sites) + " sites");
    }
  } else if (population < k_sites) {
    throw InputError("scenario: fewer rows than sites");
  }
  if (!(overall_case_rate > 0.0 && overall_case_rate < 1.0)) {
    throw InputError("scenario: overall case rate must lie in (0, 1)");
  }
  if (rare_covariate) {
    if (rare_covariate->site >= k_sites || rare_covariate->covariate >= 5) {
      throw InputError("scenario: rare covariate site or column out of range");
    }
    if (!(rare_covariate->probability > 0.0 && rare_covariate->probability < 1.0)) {
      throw InputError("scenario: rare covariate probability must lie in (0, 1)");
    }
  }
  if (rare_outcome && rare_outcome->site != 0) {
    throw InputError("scenario: the rare-outcome modifier targets site 1");
  }
  if (rare_outcome && layout != SiteLayout::outcome_dependent) {
    throw InputError("scenario: the rare-outcome modifier needs the outcome-dependent layout");
  }
  if (!site_order.empty()) {
    std::vector<bool> seen(k_sites, false);
    if (site_order.size() != k_sites) throw InputError("scenario: site order must list every site once");
    for (auto i : site_order) {
      if (i >= k_sites || seen[i]) throw InputError("scenario: site order must be a permutation");
      seen[i] = true;
    }
  }
  if (max_attempts < 1) throw InputError("scenario: max_attempts must be >= 1");
}

ScenarioConfig ScenarioConfig::scenario(int id, std::uint64_t seed, std::size_t k_sites) {
  ScenarioConfig c;
  c.scenario_id = id;
  c.base_seed = seed;
  switch (id) {
    case 1:
      break;
    case 2:
      c.site5_case_rate = c.overall_case_rate;
      break;
    case 3:
      c.k_sites = k_sites;
      c.population = 360 + c.extra_site_size * (k_sites < 5 ? 0 : k_sites - 5);
      break;
    case 4:
    case 5:
      c.site5_case_rate = c.overall_case_rate;
      c.rare_covariate = RareCovariate{};
      c.reorder_bad_start = id == 5;
      break;
    case 6:
      c.site5_case_rate = c.overall_case_rate;
      c.rare_outcome = RareOutcome{};
      break;
    default:
      throw InputError("scenario: id must be between 1 and 6");
  }
  return c;
}

ScenarioConfig ScenarioConfig::equal_split(std::size_t n_total, std::size_t k_sites, std::uint64_t seed) {
  ScenarioConfig c;
  c.scenario_id = 0;
  c.layout = SiteLayout::equal_split;
  c.k_sites = k_sites;
  c.population = n_total;
  c.base_seed = seed;
  return c;
}

std::vector<SiteDataset> GeneratedTrial::ordered_sites() const {
  std::vector<SiteDataset> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(sites[i]);
  return out;
}

namespace {

std::vector<std::size_t> draw_members(const Population& pop, const std::vector<std::size_t>& pool,
                                      const AssignmentParams& ap, Rng& rng,
                                      std::vector<std::size_t>& rest) {
  std::vector<std::size_t> chosen;
  rest.clear();
  for (auto i : pool) {
    const double p = pop.y(static_cast<Eigen::Index>(i)) == 1.0 ? ap.p_case : ap.p_control;
    if (rng.bernoulli(p)) {
      chosen.push_back(i);
    } else {
      rest.push_back(i);
    }
  }
  return chosen;
}

// Splits `pool` in row order into consecutive blocks of the given sizes.
std::vector<std::vector<std::size_t>> take_blocks(const std::vector<std::size_t>& pool,
                                                  const std::vector<std::size_t>& sizes) {
  std::vector<std::vector<std::size_t>> out;
  std::size_t at = 0;
  for (auto s : sizes) {
    out.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(at),
                     pool.begin() + static_cast<std::ptrdiff_t>(at + s));
    at += s;
  }
  return out;
}

void apply_rare_covariate(Population& pop, const std::vector<std::size_t>& rows, const RareCovariate& rc,
                          const GenerativeModel& model, std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag(Stream::rare_site)));
  const auto col = static_cast<Eigen::Index>(rc.covariate);
  for (auto i : rows) {
    const auto r = static_cast<Eigen::Index>(i);
    pop.x(r, col) = rng.bernoulli(rc.probability) ? 1.0 : 0.0;
    const Vector x = pop.x.row(r).transpose();
    pop.a(r) = rng.bernoulli(model.treatment_probability(x)) ? 1.0 : 0.0;
    pop.y(r) = rng.bernoulli(model.outcome_probability(pop.a(r), x)) ? 1.0 : 0.0;
  }
}

SiteDataset make_site(const Population& pop, const std::vector<std::size_t>& rows, std::string id) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Vector y(n), a(n);
  Matrix x(n, pop.x.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
    y(k) = pop.y(r);
    a(k) = pop.a(r);
    x.row(k) = pop.x.row(r);
  }
  return SiteDataset::create(std::move(y), std::move(a), std::move(x), std::move(id));
}

std::vector<std::size_t> default_order(const ScenarioConfig& c) {
  std::vector<std::size_t> order;
  if (c.layout == SiteLayout::equal_split || c.k_sites == 5) {
    order.resize(c.k_sites);
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
  }
  // Extra sites sit between site 4 and site 5 so site 5 stays the last hop.
  for (std::size_t i = 0; i < c.k_sites; ++i) {
    if (i != 4) order.push_back(i);
  }
  order.push_back(4);
  return order;
}

}  // namespace

GeneratedTrial generate_trial(const ScenarioConfig& config, std::uint64_t replicate) {
  config.validate();
  GeneratedTrial trial;
  trial.truth = config.model;
  trial.diagnostics.replicate = replicate;

  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    const std::uint64_t seed = derive_seed(config.base_seed, replicate, static_cast<std::uint64_t>(attempt));
    Population pop = generate_population(config.population, seed, config.model);
    std::vector<std::size_t> all(pop.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::vector<std::size_t>> members(config.k_sites);
    std::optional<AssignmentParams> ap5, ap1;

    bool ok = true;
    if (config.layout == SiteLayout::equal_split) {
      const std::size_t base = config.population / config.k_sites;
      std::vector<std::size_t> sizes(config.k_sites, base);
      sizes.back() += config.population - base * config.k_sites;
      members = take_blocks(all, sizes);
    } else {
      Rng assign(derive_seed(seed, tag(Stream::assignment)));
      const auto n_total = static_cast<double>(config.population);
      ap5 = solve_assignment_params(config.site5_target_n, config.site5_case_rate, config.overall_case_rate,
                                    n_total);
      std::vector<std::size_t> rest;
      members[4] = draw_members(pop, all, *ap5, assign, rest);
      const std::size_t n5 = members[4].size();
      const std::size_t extra = config.extra_site_size * (config.k_sites - 5);
      if (config.rare_outcome) {
        ap1 = solve_assignment_params(config.rare_outcome->target_n, config.rare_outcome->case_rate,
                                      config.overall_case_rate, static_cast<double>(rest.size()));
        std::vector<std::size_t> rest2;
        members[0] = draw_members(pop, rest, *ap1, assign, rest2);
        const std::size_t need = 160 + extra;
        if (n5 == 0 || members[0].empty() || rest2.size() <= need) {
          ok = false;
        } else {
          std::vector<std::size_t> sizes{80, 80};
          sizes.push_back(rest2.size() - need);
          for (std::size_t k = 5; k < config.k_sites; ++k) sizes.push_back(config.extra_site_size);
          auto blocks = take_blocks(rest2, sizes);
          members[1] = std::move(blocks[0]);
          members[2] = std::move(blocks[1]);
          members[3] = std::move(blocks[2]);
          for (std::size_t k = 5; k < config.k_sites; ++k) members[k] = std::move(blocks[k - 2]);
        }
      } else if (n5 == 0 || n5 >= 100) {
        ok = false;
      } else {
        std::vector<std::size_t> sizes{100, 80, 80, 100 - n5};
        for (std::size_t k = 5; k < config.k_sites; ++k) sizes.push_back(config.extra_site_size);
        auto blocks = take_blocks(rest, sizes);
        for (std::size_t k = 0; k < 4; ++k) members[k] = std::move(blocks[k]);
        for (std::size_t k = 5; k < config.k_sites; ++k) members[k] = std::move(blocks[k - 1]);
      }
      if (ok) trial.diagnostics.n5 = n5;
    }
    if (!ok) {
      ++trial.diagnostics.regenerations;
      continue;
    }

    if (config.rare_covariate) {
      apply_rare_covariate(pop, members[config.rare_covariate->site], *config.rare_covariate, config.model,
                           seed);
    }

    trial.rows = members;
    for (std::size_t k = 0; k < config.k_sites; ++k) {
      trial.sites.push_back(make_site(pop, members[k], "site" + std::to_string(k + 1)));
      trial.diagnostics.case_rates.push_back(trial.sites.back().case_rate());
    }
    trial.bad_sites.assign(config.k_sites, false);
    if (config.rare_covariate) trial.bad_sites[config.rare_covariate->site] = true;
    trial.order = config.site_order.empty() ? default_order(config) : config.site_order;
    if (config.reorder_bad_start) {
      std::vector<std::size_t> sizes;
      for (const auto& s : trial.sites) sizes.push_back(s.size());
      trial.order = swap_bad_start(trial.order, sizes, trial.bad_sites);
    }
    trial.diagnostics.seed = seed;
    trial.diagnostics.site5 = ap5;
    trial.diagnostics.rare_outcome = ap1;
    trial.true_log_or = kTrueLogOr;
    return trial;
  }
  throw InfeasibleTarget("scenario: no valid site split after " + std::to_string(config.max_attempts) +
                         " attempts");
}

void write_trial(const std::filesystem::path& dir, const GeneratedTrial& trial, const ScenarioConfig& config) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json m;
  m["generator"] = std::string(kGeneratorName);
  m["scenario_id"] = config.scenario_id;
  m["base_seed"] = config.base_seed;
  m["replicate"] = trial.diagnostics.replicate;
  m["trial_seed"] = trial.diagnostics.seed;
  m["regenerations"] = trial.diagnostics.regenerations;
  m["n5"] = trial.diagnostics.n5;
  m["true_log_or"] = trial.true_log_or;
  if (trial.diagnostics.site5) {
    m["site5_assignment"] = {{"a", trial.diagnostics.site5->a}, {"b", trial.diagnostics.site5->b}};
  }
  if (trial.diagnostics.rare_outcome) {
    m["site1_assignment"] = {{"a", trial.diagnostics.rare_outcome->a},
                             {"b", trial.diagnostics.rare_outcome->b}};
  }
  auto& sites = m["sites"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < trial.sites.size(); ++k) {
    const auto& s = trial.sites[k];
    const std::string file = s.site_id() + ".csv";
    write_site_csv(dir / file, s);
    sites.push_back({{"site_id", s.site_id()}, {"file", file}, {"n", s.size()}, {"case_rate", s.case_rate()}});
  }
  m["order"] = trial.order;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw InputError("cannot write manifest in '" + dir.string() + "'");
  out << m.dump(2) << '\n';
}

}  // namespace cola
