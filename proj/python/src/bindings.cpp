// Python bindings. Results come back as plain dicts and numpy arrays; relay
// packets cross the boundary as their canonical JSON text.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cola/baselines.hpp"
#include "cola/constants.hpp"
#include "cola/csv.hpp"
#include "cola/engine.hpp"
#include "cola/harness.hpp"
#include "cola/packet.hpp"
#include "cola/simgen.hpp"

namespace py = pybind11;
using namespace cola;

namespace {

MetaFailureRule rule_from(const std::string& s) {
  if (s == "any_site" || s == "any-site") return MetaFailureRule::any_site;
  if (s == "fewer_than_two" || s == "fewer-than-two") return MetaFailureRule::fewer_than_two;
  if (s == "all_sites" || s == "all-sites") return MetaFailureRule::all_sites;
  throw InputError("unknown meta rule '" + s + "'");
}

py::dict estimands_dict(const EstimandReport& e) {
  py::dict d;
  d["mu1"] = e.mu1;
  d["mu0"] = e.mu0;
  d["delta_d"] = e.delta_d;
  d["se_delta_d"] = e.se_delta_d;
  d["log_rr"] = e.log_rr;
  d["se_log_rr"] = e.se_log_rr;
  d["log_or"] = e.log_or;
  d["se_log_or"] = e.se_log_or;
  d["or"] = e.or_point;
  d["ci95_or"] = e.ci95_or;
  return d;
}

py::dict inference_dict(const InferenceResult& r) {
  py::dict d;
  d["converged"] = r.converged;
  d["failure"] = std::string(to_string(r.failure));
  d["n"] = r.n;
  if (r.converged) {
    d["gamma"] = r.theta.gamma;
    d["beta"] = r.theta.beta;
    d["beta_a"] = r.beta_a;
    d["se_beta_a"] = r.se_beta_a;
    d["ci95"] = r.ci95;
    d["covariance"] = r.covariance;
    d["estimands"] = estimands_dict(r.estimands);
  }
  return d;
}

py::dict meta_dict(const MetaResult& m) {
  py::dict d;
  d["failed"] = m.failed;
  d["single_site"] = m.single_site;
  d["n_included"] = m.n_included;
  d["included_sites"] = m.included_sites;
  d["weights"] = m.weights;
  py::list ex;
  for (const auto& e : m.excluded_sites) ex.append(py::make_tuple(e.site_id, std::string(to_string(e.reason))));
  d["excluded_sites"] = ex;
  if (m.n_included > 0) {
    d["pooled_effect"] = m.pooled_effect;
    d["pooled_se"] = m.pooled_se;
    d["ci95"] = m.ci95;
  }
  return d;
}

py::dict metrics_dict(const MetricsRow& r) {
  py::dict d;
  d["method"] = std::string(to_string(r.method));
  d["n_reps"] = r.n_reps;
  d["n_converged"] = r.n_converged;
  d["n_pooled"] = r.n_pooled;
  d["fails_pct"] = r.fails_pct;
  d["cp_pct"] = r.cp_pct;
  d["abias"] = r.abias;
  d["mse"] = r.mse;
  d["ese"] = r.ese;
  return d;
}

SolverConfig solver_from(std::optional<SolverConfig> c) {
  SolverConfig s = c.value_or(SolverConfig{});
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(_cola, m) {
  m.doc() = "Collaborative IPTW estimation over data-siloed sites";

  py::register_exception<InfeasibleTarget>(m, "InfeasibleTarget", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<PositivityViolation>(m, "PositivityViolation", PyExc_ArithmeticError);

  m.attr("TRUE_LOG_OR") = kTrueLogOr;
  m.attr("TRUE_MU1") = kTrueMu1;
  m.attr("TRUE_MU0") = kTrueMu0;

  py::class_<SolverConfig>(m, "SolverConfig")
      .def(py::init<>())
      .def_readwrite("max_iterations", &SolverConfig::max_iterations)
      .def_readwrite("tolerance", &SolverConfig::tolerance)
      .def_readwrite("divergence_bound", &SolverConfig::divergence_bound)
      .def_readwrite("regularization_floor", &SolverConfig::regularization_floor)
      .def_readwrite("damped", &SolverConfig::damped);

  py::class_<SiteDataset>(m, "SiteDataset")
      .def(py::init([](Vector y, Vector a, Matrix x, std::string site_id) {
             return SiteDataset::create(std::move(y), std::move(a), std::move(x), std::move(site_id));
           }),
           py::arg("y"), py::arg("a"), py::arg("x"), py::arg("site_id"))
      .def_static("from_csv", [](const std::string& path) { return read_site_csv(path); }, py::arg("path"))
      .def_static("parse_csv", &parse_site_csv, py::arg("text"), py::arg("site_id"))
      .def("to_csv", [](const SiteDataset& d) { return format_site_csv(d); })
      .def_property_readonly("site_id", &SiteDataset::site_id)
      .def_property_readonly("y", &SiteDataset::outcome)
      .def_property_readonly("a", &SiteDataset::treatment)
      .def_property_readonly("x", &SiteDataset::covariates)
      .def_property_readonly("ps_dim", &SiteDataset::ps_dim)
      .def("__len__", &SiteDataset::size)
      .def("__repr__", [](const SiteDataset& d) {
        return "<SiteDataset " + d.site_id() + " n=" + std::to_string(d.size()) + ">";
      });

  m.def(
      "run_protocol",
      [](const std::vector<SiteDataset>& sites, const std::string& protocol, std::vector<std::size_t> order,
         std::optional<SolverConfig> config) {
        const ProtocolResult pr = run_protocol(std::span<const SiteDataset>(sites), parse_protocol(protocol), order,
                                               solver_from(config));
        py::dict d = inference_dict(assemble_inference(pr));
        d["protocol"] = std::string(to_string(pr.protocol));
        d["site_order"] = pr.site_order;
        if (pr.failed_site) {
          d["failed_site"] = *pr.failed_site;
          d["failed_round"] = pr.failed_round;
        }
        return d;
      },
      py::arg("sites"), py::arg("protocol") = "3R", py::arg("order") = std::vector<std::size_t>{},
      py::arg("config") = py::none(), "Run a relay protocol over in-memory sites.");

  m.def(
      "oracle",
      [](const std::vector<SiteDataset>& sites, std::optional<SolverConfig> config) {
        return inference_dict(oracle_analyze(sites, solver_from(config)));
      },
      py::arg("sites"), py::arg("config") = py::none(), "Centralized fit on the pooled rows.");

  m.def(
      "meta_analysis",
      [](const std::vector<SiteDataset>& sites, const std::string& rule, std::optional<SolverConfig> config) {
        return meta_dict(meta_analyze(sites, solver_from(config), rule_from(rule)));
      },
      py::arg("sites"), py::arg("rule") = "any_site", py::arg("config") = py::none(),
      "Inverse-variance fixed-effect pooling of site-local fits.");

  m.def(
      "start_packet",
      [](const std::string& protocol, std::size_t ps_dim) {
        return packet_to_json(RelayPacket::start(parse_protocol(protocol), ps_dim));
      },
      py::arg("protocol"), py::arg("ps_dim"));
  m.def(
      "relay_hop",
      [](const SiteDataset& site, const std::string& packet, std::optional<SolverConfig> config) {
        const HopResult hop = relay_hop(site, packet_from_json(packet), solver_from(config));
        return py::make_tuple(packet_to_json(hop.packet), hop.ok, std::string(to_string(hop.failure)));
      },
      py::arg("site"), py::arg("packet"), py::arg("config") = py::none(),
      "One site's hop. Returns (packet_json, ok, failure).");
  m.def(
      "next_round", [](const std::string& packet) { return packet_to_json(next_round(packet_from_json(packet))); },
      py::arg("packet"));
  m.def(
      "finalize",
      [](const std::string& packet) {
        const RelayPacket p = packet_from_json(packet);
        if (!p.is_last_round() || !p.cumulants.v) throw InputError("finalize needs a final-round packet");
        InferenceResult r = assemble_inference(final_theta(p), p.cumulants.h, *p.cumulants.v);
        r.n = p.cumulants.n;
        return inference_dict(r);
      },
      py::arg("packet"));

  m.def(
      "generate_trial",
      [](int scenario, std::uint64_t seed, std::uint64_t replicate, std::size_t k_sites) {
        const ScenarioConfig cfg = ScenarioConfig::scenario(scenario, seed, k_sites);
        const GeneratedTrial t = generate_trial(cfg, replicate);
        py::dict d;
        d["sites"] = t.sites;
        d["order"] = t.order;
        d["bad_sites"] = t.bad_sites;
        d["n5"] = t.diagnostics.n5;
        d["regenerations"] = t.diagnostics.regenerations;
        d["seed"] = t.diagnostics.seed;
        return d;
      },
      py::arg("scenario"), py::arg("seed") = 20240101, py::arg("replicate") = 0, py::arg("k_sites") = 5);

  m.def(
      "run_experiment",
      [](int scenario, std::size_t reps, const std::string& methods, std::uint64_t seed, unsigned threads,
         const std::string& rule) {
        ExperimentOptions o;
        o.methods = parse_methods(methods);
        o.n_reps = reps;
        o.threads = threads;
        o.meta_rule = rule_from(rule);
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(ScenarioConfig::scenario(scenario, seed), o);
        }
        py::list rows;
        for (const auto& row : r.rows) rows.append(metrics_dict(row));
        return rows;
      },
      py::arg("scenario"), py::arg("reps") = 100, py::arg("methods") = "all", py::arg("seed") = 20240101,
      py::arg("threads") = 0, py::arg("meta_rule") = "any_site");

  m.def(
      "report",
      [](int scenario, std::size_t reps, const std::string& methods, std::uint64_t seed, const std::string& format,
         unsigned threads) {
        ExperimentOptions o;
        o.methods = parse_methods(methods);
        o.n_reps = reps;
        o.threads = threads;
        const ReportFormat f = parse_report_format(format);
        std::string out;
        {
          py::gil_scoped_release release;
          const ExperimentResult r = run_experiment(ScenarioConfig::scenario(scenario, seed), o);
          out = emit_report(r.rows, f, {.scenario = scenario, .seed = seed, .reps = reps, .truth = r.truth});
        }
        return out;
      },
      py::arg("scenario"), py::arg("reps") = 100, py::arg("methods") = "all", py::arg("seed") = 20240101,
      py::arg("format") = "json", py::arg("threads") = 0, "Experiment rendered as table-text, csv or json.");

  m.def(
      "monte_carlo_truth",
      [](std::size_t samples, std::uint64_t seed) {
        const MonteCarloTruth t = monte_carlo_truth(samples, seed);
        py::dict d;
        d["mu1"] = t.mu1;
        d["mu0"] = t.mu0;
        d["log_or"] = t.log_or;
        d["case_rate"] = t.case_rate;
        return d;
      },
      py::arg("samples") = 1'000'000, py::arg("seed") = kTruthSeed);
}
