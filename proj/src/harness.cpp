#include "cola/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "cola/constants.hpp"
#include "cola/csv.hpp"
#include "cola/rng.hpp"
#include "json.hpp"

namespace cola {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view to_string(Method method) noexcept {
  switch (method) {
    case Method::Oracle:
      return "Oracle";
    case Method::ThreeR:
      return "3R-COLA";
    case Method::TwoR:
      return "2R-COLA";
    case Method::TwoRInf:
      return "2R-COLA-INF";
    case Method::OneR:
      return "1R-COLA";
    case Method::Meta:
      return "Meta";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  const std::string n = lower(trim(name));
  if (n == "oracle") return Method::Oracle;
  if (n == "3r" || n == "3r-cola") return Method::ThreeR;
  if (n == "2r" || n == "2r-cola") return Method::TwoR;
  if (n == "2r-inf" || n == "2r-cola-inf") return Method::TwoRInf;
  if (n == "1r" || n == "1r-cola") return Method::OneR;
  if (n == "meta") return Method::Meta;
  throw InputError("unknown method '" + std::string(name) + "'");
}

std::vector<Method> all_methods() {
  return {Method::Oracle, Method::ThreeR, Method::TwoR, Method::TwoRInf, Method::OneR, Method::Meta};
}

std::vector<Method> parse_methods(std::string_view list) {
  if (lower(trim(list)) == "all") return all_methods();
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const auto item = list.substr(start, comma == std::string_view::npos ? list.size() - start : comma - start);
    if (!trim(item).empty()) {
      const Method m = parse_method(item);
      if (std::find(out.begin(), out.end(), m) != out.end()) {
        throw InputError("method '" + std::string(to_string(m)) + "' listed twice");
      }
      out.push_back(m);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw InputError("no methods given");
  return out;
}

bool operator==(const MetricsRow& x, const MetricsRow& y) {
  // NaN marks an undefined statistic, so two NaNs compare equal here.
  auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
  return x.method == y.method && same(x.fails_pct, y.fails_pct) && same(x.cp_pct, y.cp_pct) &&
         same(x.abias, y.abias) && same(x.mse, y.mse) && same(x.ese, y.ese) && x.n_reps == y.n_reps &&
         x.n_converged == y.n_converged && x.n_pooled == y.n_pooled;
}

std::vector<MethodEstimate> run_methods(const GeneratedTrial& trial, const std::vector<Method>& methods,
                                        const SolverConfig& solver, MetaFailureRule meta_rule) {
  std::vector<MethodEstimate> out;
  out.reserve(methods.size());
  for (const Method m : methods) {
    MethodEstimate est;
    if (m == Method::Oracle) {
      const InferenceResult r = oracle_analyze(trial.sites, solver);
      est = {r.converged, r.failure, r.beta_a, r.se_beta_a};
    } else if (m == Method::Meta) {
      const MetaResult r = meta_analyze(trial.sites, solver, meta_rule);
      est.converged = !r.failed;
      est.failure = r.failed ? (r.excluded_sites.empty() ? FailureReason::none : r.excluded_sites.front().reason)
                             : FailureReason::none;
      est.beta_a = r.pooled_effect;
      est.se = r.pooled_se;
    } else {
      Protocol p = Protocol::ThreeR;
      if (m == Method::TwoR) p = Protocol::TwoR;
      if (m == Method::TwoRInf) p = Protocol::TwoRInf;
      if (m == Method::OneR) p = Protocol::OneR;
      const ProtocolResult pr = run_protocol(std::span<const SiteDataset>(trial.sites), p,
                                             std::span<const std::size_t>(trial.order), solver);
      const InferenceResult r = assemble_inference(pr, solver.model.link);
      est = {r.converged, r.failure, r.beta_a, r.se_beta_a};
    }
    out.push_back(est);
  }
  return out;
}

std::vector<MetricsRow> compute_metrics(const std::vector<ReplicateRecord>& records,
                                        const std::vector<Method>& methods, double truth) {
  std::vector<bool> pooled(records.size(), true);
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (const auto& e : records[r].estimates) pooled[r] = pooled[r] && e.converged;
  }
  std::vector<MetricsRow> rows;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    MetricsRow row;
    row.method = methods[k];
    row.n_reps = static_cast<long long>(records.size());
    std::vector<double> est, se;
    long long covered = 0;
    double abs_bias = 0.0;
    for (std::size_t r = 0; r < records.size(); ++r) {
      const MethodEstimate& e = records[r].estimates[k];
      if (e.converged) ++row.n_converged;
      if (!pooled[r]) continue;
      est.push_back(e.beta_a);
      se.push_back(e.se);
      abs_bias += std::abs(e.beta_a - truth);
      if (std::abs(e.beta_a - truth) <= kZ95 * e.se) ++covered;
    }
    row.n_pooled = static_cast<long long>(est.size());
    row.fails_pct = row.n_reps == 0 ? kNaN : 100.0 * static_cast<double>(row.n_reps - row.n_converged) /
                                                 static_cast<double>(row.n_reps);
    if (est.empty()) {
      row.cp_pct = row.abias = row.mse = row.ese = kNaN;
    } else {
      const double m = static_cast<double>(est.size());
      row.cp_pct = 100.0 * static_cast<double>(covered) / m;
      row.abias = abs_bias / m;
      std::vector<double> sorted = se;
      std::sort(sorted.begin(), sorted.end());
      const std::size_t h = sorted.size() / 2;
      row.mse = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
      if (est.size() < 2) {
        row.ese = kNaN;
      } else {
        double mean = 0.0;
        for (double v : est) mean += v;
        mean /= m;
        double ss = 0.0;
        for (double v : est) ss += (v - mean) * (v - mean);
        row.ese = std::sqrt(ss / (m - 1.0));
      }
    }
    rows.push_back(row);
  }
  return rows;
}

ExperimentResult run_experiment(const ScenarioConfig& config, const ExperimentOptions& options) {
  config.validate();
  options.solver.validate();
  if (options.n_reps < 1) throw InputError("experiment: at least one replicate is required");
  if (options.methods.empty()) throw InputError("experiment: no methods requested");

  ExperimentResult result;
  result.config = config;
  result.methods = options.methods;
  result.truth = options.truth.value_or(kTrueLogOr);
  result.records.resize(options.n_reps);

  unsigned threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, options.n_reps));

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= options.n_reps) return;
      try {
        const GeneratedTrial trial = generate_trial(config, i);
        ReplicateRecord& rec = result.records[i];
        rec.replicate = i;
        rec.regenerations = trial.diagnostics.regenerations;
        rec.n5 = trial.diagnostics.n5;
        rec.estimates = run_methods(trial, options.methods, options.solver, options.meta_rule);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(options.n_reps);
        return;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  result.rows = compute_metrics(result.records, result.methods, result.truth);
  return result;
}

ReportFormat parse_report_format(std::string_view name) {
  const std::string n = lower(trim(name));
  if (n == "table-text" || n == "table" || n == "text") return ReportFormat::table_text;
  if (n == "csv") return ReportFormat::csv;
  if (n == "json") return ReportFormat::json;
  throw InputError("unknown report format '" + std::string(name) + "' (expected table-text, csv or json)");
}

namespace {

const char* kCsvHeader = "method,n_reps,n_converged,n_pooled,fails_pct,cp_pct,abias,mse,ese";

std::string csv_value(double v) { return std::isnan(v) ? "NA" : format_double(v); }

std::string fixed(double v, int decimals) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string milli(double v) {
  if (std::isnan(v)) return "NA";
  return std::to_string(static_cast<long long>(std::llround(v * 1000.0)));
}

void pad(std::string& out, const std::string& s, std::size_t width, bool left = false) {
  if (left) out += s;
  if (s.size() < width) out.append(width - s.size(), ' ');
  if (!left) out += s;
}

double parse_number(std::string_view s, const char* what) {
  const std::string t = trim(s);
  if (t == "NA") return kNaN;
  double v = 0.0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size()) {
    throw InputError(std::string("metrics: bad value for ") + what + ": '" + t + "'");
  }
  return v;
}

long long parse_count(std::string_view s, const char* what) {
  const std::string t = trim(s);
  long long v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || v < 0) {
    throw InputError(std::string("metrics: bad count for ") + what + ": '" + t + "'");
  }
  return v;
}

nlohmann::ordered_json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

std::string emit_report(const std::vector<MetricsRow>& rows, ReportFormat format, const ReportMeta& meta) {
  if (rows.empty()) throw InputError("report: no rows");
  std::string out;
  switch (format) {
    case ReportFormat::table_text: {
      pad(out, "Method", 13, true);
      pad(out, "Fails(%)", 9);
      pad(out, "CP(%)", 8);
      pad(out, "Abias", 8);
      pad(out, "MSE", 7);
      pad(out, "ESE", 7);
      pad(out, "Pooled", 8);
      out += "\n";
      for (const auto& r : rows) {
        pad(out, std::string(to_string(r.method)), 13, true);
        pad(out, fixed(r.fails_pct, 2), 9);
        pad(out, fixed(r.cp_pct, 1), 8);
        pad(out, milli(r.abias), 8);
        pad(out, milli(r.mse), 7);
        pad(out, milli(r.ese), 7);
        pad(out, std::to_string(r.n_pooled), 8);
        out += "\n";
      }
      out += "Abias, MSE and ESE are in units of 1e-3; MSE is the median estimated SE.\n";
      break;
    }
    case ReportFormat::csv: {
      out += kCsvHeader;
      out += '\n';
      for (const auto& r : rows) {
        out += std::string(to_string(r.method)) + ',' + std::to_string(r.n_reps) + ',' +
               std::to_string(r.n_converged) + ',' + std::to_string(r.n_pooled) + ',' + csv_value(r.fails_pct) +
               ',' + csv_value(r.cp_pct) + ',' + csv_value(r.abias) + ',' + csv_value(r.mse) + ',' +
               csv_value(r.ese) + '\n';
      }
      break;
    }
    case ReportFormat::json: {
      nlohmann::ordered_json j;
      j["schema_version"] = 1;
      if (meta.scenario) j["scenario"] = *meta.scenario;
      if (meta.seed) j["seed"] = *meta.seed;
      if (meta.reps) j["reps"] = *meta.reps;
      if (meta.truth) j["truth"] = *meta.truth;
      auto& arr = j["rows"] = nlohmann::ordered_json::array();
      for (const auto& r : rows) {
        arr.push_back({{"method", std::string(to_string(r.method))},
                       {"n_reps", r.n_reps},
                       {"n_converged", r.n_converged},
                       {"n_pooled", r.n_pooled},
                       {"fails_pct", json_number(r.fails_pct)},
                       {"cp_pct", json_number(r.cp_pct)},
                       {"abias", json_number(r.abias)},
                       {"mse", json_number(r.mse)},
                       {"ese", json_number(r.ese)}});
      }
      out = j.dump(2);
      out += '\n';
      break;
    }
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || trim(line) != kCsvHeader) {
    throw InputError(std::string("metrics csv: header must be '") + kCsvHeader + "'");
  }
  std::vector<MetricsRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) {
      throw InputError("metrics csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " fields, expected 9");
    }
    MetricsRow r;
    r.method = parse_method(cells[0]);
    r.n_reps = parse_count(cells[1], "n_reps");
    r.n_converged = parse_count(cells[2], "n_converged");
    r.n_pooled = parse_count(cells[3], "n_pooled");
    r.fails_pct = parse_number(cells[4], "fails_pct");
    r.cp_pct = parse_number(cells[5], "cp_pct");
    r.abias = parse_number(cells[6], "abias");
    r.mse = parse_number(cells[7], "mse");
    r.ese = parse_number(cells[8], "ese");
    rows.push_back(r);
  }
  return rows;
}

std::vector<MetricsRow> parse_metrics_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("metrics json: ") + e.what());
  }
  if (!j.is_object() || !j.contains("rows") || !j["rows"].is_array()) {
    throw InputError("metrics json: expected an object with a 'rows' array");
  }
  auto num = [](const nlohmann::json& v) { return v.is_null() ? kNaN : v.get<double>(); };
  std::vector<MetricsRow> rows;
  try {
    for (const auto& e : j["rows"]) {
      MetricsRow r;
      r.method = parse_method(e.at("method").get<std::string>());
      r.n_reps = e.at("n_reps").get<long long>();
      r.n_converged = e.at("n_converged").get<long long>();
      r.n_pooled = e.at("n_pooled").get<long long>();
      r.fails_pct = num(e.at("fails_pct"));
      r.cp_pct = num(e.at("cp_pct"));
      r.abias = num(e.at("abias"));
      r.mse = num(e.at("mse"));
      r.ese = num(e.at("ese"));
      rows.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("metrics json: ") + e.what());
  }
  return rows;
}

std::string run_sweep(const SweepOptions& sweep, std::uint64_t seed, const ExperimentOptions& options) {
  const bool covariate = lower(sweep.kind) == "covariate";
  if (!covariate && lower(sweep.kind) != "outcome") {
    throw InputError("sweep: kind must be 'covariate' or 'outcome'");
  }
  if (sweep.grid.empty()) throw InputError("sweep: empty grid");
  std::string out = "kind,value,reorder,method,n_reps,n_converged,n_pooled,fails_pct,cp_pct,abias,mse,ese\n";
  for (const double v : sweep.grid) {
    ScenarioConfig c = ScenarioConfig::scenario(covariate ? (sweep.reorder ? 5 : 4) : 6, seed);
    if (covariate) {
      c.rare_covariate->probability = v;
    } else {
      c.rare_outcome->case_rate = v;
    }
    const ExperimentResult res = run_experiment(c, options);
    for (const auto& r : res.rows) {
      out += std::string(covariate ? "covariate" : "outcome") + ',' + format_double(v) + ',' +
             (sweep.reorder ? "1" : "0") + ',' + std::string(to_string(r.method)) + ',' +
             std::to_string(r.n_reps) + ',' + std::to_string(r.n_converged) + ',' + std::to_string(r.n_pooled) +
             ',' + csv_value(r.fails_pct) + ',' + csv_value(r.cp_pct) + ',' + csv_value(r.abias) + ',' +
             csv_value(r.mse) + ',' + csv_value(r.ese) + '\n';
    }
  }
  return out;
}

}  // namespace cola
