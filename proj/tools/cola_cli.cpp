// Command-line front end: simulate data, run protocols on site CSVs (in one
// process or one hop at a time), and run the simulation study.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cola/baselines.hpp"
#include "cola/constants.hpp"
#include "cola/csv.hpp"
#include "cola/harness.hpp"
#include "cola/packet.hpp"
#include "cola/rng.hpp"
#include "cola/simgen.hpp"
#include "json.hpp"

using namespace cola;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitConvergence = 3;
constexpr int kExitInfeasible = 4;

// Reported by a subcommand instead of throwing so the exit code is explicit.
struct ConvergenceFailure {
  std::string message;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_order(const std::string& s, std::size_t n_sites) {
  std::vector<std::size_t> order;
  for (const auto& item : split(s, ',')) {
    std::size_t v = 0;
    try {
      v = std::stoul(item);
    } catch (const std::exception&) {
      throw InputError("--order: '" + item + "' is not an index");
    }
    if (v >= n_sites) throw InputError("--order: index " + item + " out of range");
    order.push_back(v);
  }
  std::vector<bool> seen(n_sites, false);
  for (auto v : order) {
    if (seen[v]) throw InputError("--order: index repeated");
    seen[v] = true;
  }
  if (!order.empty() && order.size() != n_sites) throw InputError("--order must list every site once");
  return order;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
}

ojson vec(const Vector& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

ojson mat(const Matrix& m) {
  ojson data = ojson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

ojson estimands_json(const EstimandReport& e) {
  return {{"mu1", e.mu1},
          {"mu0", e.mu0},
          {"delta_d", e.delta_d},
          {"se_delta_d", e.se_delta_d},
          {"ci95_delta_d", {e.ci95_delta_d.first, e.ci95_delta_d.second}},
          {"log_rr", e.log_rr},
          {"se_log_rr", e.se_log_rr},
          {"ci95_log_rr", {e.ci95_log_rr.first, e.ci95_log_rr.second}},
          {"log_or", e.log_or},
          {"se_log_or", e.se_log_or},
          {"ci95_log_or", {e.ci95_log_or.first, e.ci95_log_or.second}},
          {"or", e.or_point},
          {"ci95_or", {e.ci95_or.first, e.ci95_or.second}}};
}

ojson inference_json(const std::string& method, const InferenceResult& r) {
  ojson j;
  j["method"] = method;
  j["converged"] = r.converged;
  j["failure"] = std::string(to_string(r.failure));
  if (!r.converged) return j;
  j["n"] = r.n;
  j["theta"] = {{"gamma", vec(r.theta.gamma)}, {"beta", vec(r.theta.beta)}};
  j["beta_a"] = r.beta_a;
  j["se_beta_a"] = r.se_beta_a;
  j["ci95"] = {r.ci95.first, r.ci95.second};
  j["covariance"] = mat(r.covariance);
  j["estimands"] = estimands_json(r.estimands);
  return j;
}

struct SolverFlags {
  double tolerance = 1e-8;
  int max_iterations = 50;
  bool damped = false;

  void attach(CLI::App* app) {
    app->add_option("--tol", tolerance, "Newton step tolerance")->capture_default_str();
    app->add_option("--max-iter", max_iterations, "Newton iteration limit")->capture_default_str();
    app->add_flag("--damped", damped, "Halve steps that increase the residual");
  }
  SolverConfig config() const {
    SolverConfig c;
    c.tolerance = tolerance;
    c.max_iterations = max_iterations;
    c.damped = damped;
    c.validate();
    return c;
  }
};

MetaFailureRule parse_meta_rule(const std::string& s) {
  if (s == "any-site") return MetaFailureRule::any_site;
  if (s == "fewer-than-two") return MetaFailureRule::fewer_than_two;
  if (s == "all-sites") return MetaFailureRule::all_sites;
  throw InputError("--meta-rule must be any-site, fewer-than-two or all-sites");
}

std::vector<SiteDataset> load_sites(const std::string& list) {
  std::vector<SiteDataset> sites;
  for (const auto& f : split(list, ',')) sites.push_back(read_site_csv(f));
  if (sites.empty()) throw InputError("--sites: no files given");
  return sites;
}

ScenarioConfig scenario_from(int id, std::uint64_t seed, std::size_t k_sites, double rare) {
  ScenarioConfig c = ScenarioConfig::scenario(id, seed, k_sites);
  if (rare > 0.0) {
    if (c.rare_covariate) {
      c.rare_covariate->probability = rare;
    } else if (c.rare_outcome) {
      c.rare_outcome->case_rate = rare;
    } else {
      throw InputError("--rare applies to scenarios 4, 5 and 6 only");
    }
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative IPTW estimation across data-siloed sites"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "cola 0.1.0");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate one trial as per-site CSVs plus a manifest");
  int sim_scenario = 1;
  std::uint64_t sim_seed = 20240101;
  std::uint64_t sim_rep = 0;
  std::size_t sim_k = 5;
  double sim_rare = 0.0;
  std::string sim_out;
  sim->add_option("--scenario", sim_scenario, "Scenario 1-6")->required()->check(CLI::Range(1, 6));
  sim->add_option("--seed", sim_seed, "Base seed")->capture_default_str();
  sim->add_option("--replicate", sim_rep, "Replicate index")->capture_default_str();
  sim->add_option("--k-sites", sim_k, "Number of sites (scenario 3)")->capture_default_str();
  sim->add_option("--rare", sim_rare, "Rare covariate probability or rare outcome rate");
  sim->add_option("--out", sim_out, "Output directory")->required();

  // run
  auto* run = app.add_subcommand("run", "Run a protocol or comparator on site CSV files");
  std::string run_protocol_name, run_sites, run_order, run_out, run_meta_rule = "any-site";
  SolverFlags run_solver;
  run->add_option("--protocol", run_protocol_name, "1r, 2r, 2r-inf, 3r, oracle or meta")->required();
  run->add_option("--sites", run_sites, "Comma-separated site CSV files")->required();
  run->add_option("--order", run_order, "Relay order as 0-based indices into --sites");
  run->add_option("--out", run_out, "Result JSON (stdout if omitted)");
  run->add_option("--meta-rule", run_meta_rule, "any-site, fewer-than-two or all-sites")->capture_default_str();
  run_solver.attach(run);

  // relay-step
  auto* step = app.add_subcommand("relay-step", "Process one relay hop at one site");
  std::string step_packet, step_site, step_out, step_start;
  bool step_next = false;
  SolverFlags step_solver;
  step->add_option("--packet", step_packet, "Incoming packet JSON");
  step->add_option("--start", step_start, "Open a new relay for this protocol instead of reading a packet");
  step->add_flag("--next-round", step_next, "Treat --packet as a completed round and open the next one");
  step->add_option("--site", step_site, "This site's CSV file");
  step->add_option("--out", step_out, "Outgoing packet JSON")->required();
  step_solver.attach(step);

  // finalize
  auto* fin = app.add_subcommand("finalize", "Sandwich inference from a completed final-round packet");
  std::string fin_packet, fin_out;
  fin->add_option("--packet", fin_packet, "Final packet JSON")->required();
  fin->add_option("--out", fin_out, "Result JSON (stdout if omitted)");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Replicated simulation study");
  int exp_scenario = 1;
  std::size_t exp_reps = 2000, exp_k = 5;
  std::string exp_methods = "all", exp_format = "table-text", exp_out, exp_meta_rule = "any-site";
  std::uint64_t exp_seed = 20240101;
  unsigned exp_threads = 0;
  double exp_rare = 0.0;
  SolverFlags exp_solver;
  exp->add_option("--scenario", exp_scenario, "Scenario 1-6")->required()->check(CLI::Range(1, 6));
  exp->add_option("--reps", exp_reps, "Replicates")->capture_default_str();
  exp->add_option("--methods", exp_methods, "Comma-separated methods or 'all'")->capture_default_str();
  exp->add_option("--seed", exp_seed, "Base seed")->capture_default_str();
  exp->add_option("--format", exp_format, "table-text, csv or json")->capture_default_str();
  exp->add_option("--out", exp_out, "Output file (stdout if omitted)");
  exp->add_option("--threads", exp_threads, "Worker threads (0 = all cores)")->capture_default_str();
  exp->add_option("--k-sites", exp_k, "Number of sites (scenario 3)")->capture_default_str();
  exp->add_option("--rare", exp_rare, "Rare covariate probability or rare outcome rate");
  exp->add_option("--meta-rule", exp_meta_rule, "any-site, fewer-than-two or all-sites")->capture_default_str();
  exp_solver.attach(exp);

  // report
  auto* rep = app.add_subcommand("report", "Re-render a metrics file");
  std::string rep_in, rep_format = "table-text", rep_out;
  rep->add_option("--in", rep_in, "Metrics JSON or CSV")->required();
  rep->add_option("--format", rep_format, "table-text, csv or json")->capture_default_str();
  rep->add_option("--out", rep_out, "Output file (stdout if omitted)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Coverage against rarity of a covariate or outcome");
  std::string sw_kind = "covariate", sw_grid = "0.01,0.02,0.05,0.10", sw_methods = "all", sw_out;
  std::size_t sw_reps = 500;
  std::uint64_t sw_seed = 20240101;
  bool sw_reorder = false;
  unsigned sw_threads = 0;
  sw->add_option("--kind", sw_kind, "covariate or outcome")->capture_default_str();
  sw->add_option("--grid", sw_grid, "Comma-separated probabilities")->capture_default_str();
  sw->add_option("--reps", sw_reps, "Replicates per grid value")->capture_default_str();
  sw->add_option("--methods", sw_methods, "Comma-separated methods or 'all'")->capture_default_str();
  sw->add_option("--seed", sw_seed, "Base seed")->capture_default_str();
  sw->add_flag("--reorder", sw_reorder, "Move a bad first site behind a good one");
  sw->add_option("--threads", sw_threads, "Worker threads (0 = all cores)")->capture_default_str();
  sw->add_option("--out", sw_out, "CSV output (stdout if omitted)");

  // truth
  auto* tr = app.add_subcommand("truth", "Monte-Carlo marginal log odds ratio of the generative model");
  std::size_t tr_samples = kTruthSamples;
  std::uint64_t tr_seed = kTruthSeed;
  tr->add_option("--samples", tr_samples, "Covariate draws")->capture_default_str();
  tr->add_option("--seed", tr_seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*sim) {
      const ScenarioConfig cfg = scenario_from(sim_scenario, sim_seed, sim_k, sim_rare);
      const GeneratedTrial trial = generate_trial(cfg, sim_rep);
      write_trial(sim_out, trial, cfg);
      std::cerr << "wrote " << trial.sites.size() << " sites to " << sim_out << " (n5 = " << trial.diagnostics.n5
                << ")\n";
    } else if (*run) {
      const SolverConfig cfg = run_solver.config();
      const std::vector<SiteDataset> sites = load_sites(run_sites);
      const std::vector<std::size_t> order = parse_order(run_order, sites.size());
      std::string method = run_protocol_name;
      std::transform(method.begin(), method.end(), method.begin(), [](unsigned char c) { return std::tolower(c); });
      ojson out;
      bool ok = true;
      if (method == "oracle") {
        const InferenceResult r = oracle_analyze(sites, cfg);
        out = inference_json("Oracle", r);
        ok = r.converged;
      } else if (method == "meta") {
        const MetaResult m = meta_analyze(sites, cfg, parse_meta_rule(run_meta_rule));
        out["method"] = "Meta";
        out["converged"] = !m.failed;
        out["n_included"] = m.n_included;
        out["included_sites"] = m.included_sites;
        out["weights"] = m.weights;
        ojson ex = ojson::array();
        for (const auto& e : m.excluded_sites) {
          ex.push_back({{"site_id", e.site_id}, {"reason", std::string(to_string(e.reason))}});
        }
        out["excluded_sites"] = ex;
        if (m.n_included > 0) {
          out["pooled_effect"] = m.pooled_effect;
          out["pooled_se"] = m.pooled_se;
          out["ci95"] = {m.ci95.first, m.ci95.second};
        }
        ok = !m.failed;
      } else {
        const Protocol p = parse_protocol(method);
        const ProtocolResult pr = run_protocol(std::span<const SiteDataset>(sites), p, order, cfg);
        const InferenceResult r = assemble_inference(pr, cfg.model.link);
        out = inference_json(std::string(to_string(p)), r);
        out["site_order"] = pr.site_order;
        if (pr.failed_site) {
          out["failed_site"] = *pr.failed_site;
          out["failed_round"] = pr.failed_round;
        }
        ok = r.converged;
      }
      write_output(run_out, out.dump(2) + "\n");
      if (!ok) throw ConvergenceFailure{"run: " + run_protocol_name + " did not converge"};
    } else if (*step) {
      const SolverConfig cfg = step_solver.config();
      if (step_start.empty() == step_packet.empty()) {
        throw InputError("relay-step: give exactly one of --packet or --start");
      }
      if (!step_start.empty() && step_next) throw InputError("relay-step: --next-round needs --packet");
      std::optional<SiteDataset> site;
      if (!step_site.empty()) site = read_site_csv(step_site);
      RelayPacket in;
      if (!step_start.empty()) {
        if (!site) throw InputError("relay-step: --start needs --site to know the covariate dimension");
        in = RelayPacket::start(parse_protocol(step_start), site->ps_dim());
      } else {
        in = read_packet(step_packet);
        if (step_next) in = next_round(in);
      }
      if (!site) {
        write_packet(step_out, in);
      } else {
        const HopResult hop = relay_hop(*site, in, cfg);
        write_packet(step_out, hop.packet);
        if (!hop.ok) {
          throw ConvergenceFailure{"relay-step: site '" + site->site_id() +
                                   "' did not converge (" + std::string(to_string(hop.failure)) + ")"};
        }
      }
    } else if (*fin) {
      const RelayPacket p = read_packet(fin_packet);
      if (!p.converged_so_far) throw ConvergenceFailure{"finalize: the relay reported a failed hop"};
      const ParameterVector theta = final_theta(p);
      InferenceResult r;
      try {
        r = assemble_inference(theta, p.cumulants.h, *p.cumulants.v);
      } catch (const SingularSystem& e) {
        throw ConvergenceFailure{std::string("finalize: ") + e.what()};
      }
      r.n = p.cumulants.n;
      ojson out = inference_json(std::string(to_string(p.protocol)), r);
      out["site_trail"] = p.cumulants.sites;
      write_output(fin_out, out.dump(2) + "\n");
      if (!r.converged) throw ConvergenceFailure{"finalize: covariance is not usable"};
    } else if (*exp) {
      const ScenarioConfig cfg = scenario_from(exp_scenario, exp_seed, exp_k, exp_rare);
      ExperimentOptions o;
      o.methods = parse_methods(exp_methods);
      o.n_reps = exp_reps;
      o.threads = exp_threads;
      o.solver = exp_solver.config();
      o.meta_rule = parse_meta_rule(exp_meta_rule);
      const ReportFormat fmt = parse_report_format(exp_format);
      const ExperimentResult res = run_experiment(cfg, o);
      write_output(exp_out, emit_report(res.rows, fmt,
                                        {.scenario = exp_scenario, .seed = exp_seed, .reps = exp_reps,
                                         .truth = res.truth}));
    } else if (*rep) {
      const std::string text = read_file(rep_in);
      const bool json = text.find_first_not_of(" \t\r\n") != std::string::npos &&
                        text[text.find_first_not_of(" \t\r\n")] == '{';
      const auto rows = json ? parse_metrics_json(text) : parse_metrics_csv(text);
      write_output(rep_out, emit_report(rows, parse_report_format(rep_format)));
    } else if (*sw) {
      ExperimentOptions o;
      o.methods = parse_methods(sw_methods);
      o.n_reps = sw_reps;
      o.threads = sw_threads;
      SweepOptions s;
      s.kind = sw_kind;
      s.reorder = sw_reorder;
      s.grid.clear();
      for (const auto& g : split(sw_grid, ',')) {
        try {
          s.grid.push_back(std::stod(g));
        } catch (const std::exception&) {
          throw InputError("--grid: '" + g + "' is not a number");
        }
      }
      write_output(sw_out, run_sweep(s, sw_seed, o));
    } else if (*tr) {
      const MonteCarloTruth t = monte_carlo_truth(tr_samples, tr_seed);
      ojson out = {{"generator", std::string(kGeneratorName)},
                   {"samples", tr_samples},
                   {"seed", tr_seed},
                   {"mu1", t.mu1},
                   {"mu0", t.mu0},
                   {"log_or", t.log_or},
                   {"case_rate", t.case_rate}};
      std::cout << out.dump(2) << "\n";
    }
  } catch (const ConvergenceFailure& e) {
    std::cerr << "error: " << e.message << "\n";
    return kExitConvergence;
  } catch (const InfeasibleTarget& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const PositivityViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
