// Experiment driver. Subcommands: group-info, walk, rate, mc-slope,
// approx-study, diag. Configuration is a single JSON document; the
// --seed/--threads/--out flags override the matching config fields. Every
// command writes its files plus a manifest listing them; all payload bytes
// are deterministic under a fixed seed for any thread count, the manifest's
// wall_clock_ms field being the one exception.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "carnotwalk/diagnostics.hpp"
#include "carnotwalk/io.hpp"
#include "carnotwalk/mc.hpp"
#include "carnotwalk/parallel.hpp"
#include "carnotwalk/rate.hpp"
#include "carnotwalk/version.hpp"
#include "carnotwalk/walk.hpp"

namespace {

using nlohmann::json;

struct ToolError : std::runtime_error {
  std::string code;
  ToolError(std::string c, const std::string& msg)
      : std::runtime_error(msg), code(std::move(c)) {}
};

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const std::string& ctx) {
  if (!j.is_object()) throw ToolError("validation", ctx + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const char* k : allowed)
      if (key == k) {
        known = true;
        break;
      }
    if (!known) throw ToolError("validation", ctx + ": unknown key '" + key + "'");
  }
}

json load_config(const std::string& path) {
  const std::string text = carnot::read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw ToolError("parse", path + " line " + std::to_string(line) + ": " + e.what());
  }
}

carnot::CarnotGroup parse_group(const json& j) {
  if (j.is_string()) return carnot::CarnotGroup::named(j.get<std::string>());
  if (j.is_object()) return carnot::CarnotGroup::from_json(j);
  throw ToolError("validation", "group: expected a builtin name, a *.json path, or an inline descriptor");
}

carnot::StepDistribution parse_distribution(const json& j, const carnot::CarnotGroup& g) {
  require_keys(j, {"kind", "radius"}, "distribution");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian") {
    if (j.contains("radius"))
      throw ToolError("validation", "distribution: gaussian has no radius parameter");
    return carnot::StepDistribution::gaussian(g);
  }
  const double radius = j.value("radius", 1.0);
  const int d1 = g.horizontal_dim();
  if (kind == "uniform_cube") return carnot::StepDistribution::uniform_cube(d1, radius);
  if (kind == "uniform_ball") return carnot::StepDistribution::uniform_ball(d1, radius);
  if (kind == "sphere") return carnot::StepDistribution::sphere(d1, radius);
  if (kind == "rademacher") return carnot::StepDistribution::rademacher(d1, radius);
  throw ToolError("validation", "distribution: unknown kind '" + kind + "'");
}

carnot::GroupElement parse_element(const json& j, const carnot::CarnotGroup& g,
                                   const std::string& ctx) {
  if (!j.is_array() || static_cast<int>(j.size()) != g.dim())
    throw ToolError("validation",
                    ctx + ": expected an array of " + std::to_string(g.dim()) + " coordinates");
  carnot::Vec x(g.dim());
  for (int i = 0; i < g.dim(); ++i) x[i] = j[static_cast<std::size_t>(i)].get<double>();
  return carnot::GroupElement{std::move(x)};
}

carnot::EventSpec parse_event(const json& j, const carnot::CarnotGroup& g) {
  require_keys(j, {"kind", "threshold", "center", "radius"}, "event");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gnorm_exceed") {
    require_keys(j, {"kind", "threshold"}, "event(gnorm_exceed)");
    return carnot::EventSpec::gnorm_exceed(j.at("threshold").get<double>());
  }
  if (kind == "horizontal_exceed") {
    require_keys(j, {"kind", "threshold"}, "event(horizontal_exceed)");
    return carnot::EventSpec::horizontal_exceed(j.at("threshold").get<double>());
  }
  if (kind == "ball") {
    require_keys(j, {"kind", "center", "radius"}, "event(ball)");
    return carnot::EventSpec::ball(parse_element(j.at("center"), g, "event center"),
                                   j.at("radius").get<double>());
  }
  throw ToolError("validation", "event: unknown kind '" + kind + "'");
}

carnot::RateOptions parse_optimizer(const json& cfg, std::uint64_t seed) {
  carnot::RateOptions opt;
  opt.seed = seed;
  if (!cfg.contains("optimizer")) return opt;
  const json& j = cfg.at("optimizer");
  require_keys(j,
               {"restarts", "penalty_rounds", "inner_iterations", "feasibility_tol",
                "objective_rel_tol", "polish"},
               "optimizer");
  opt.restarts = j.value("restarts", opt.restarts);
  opt.penalty_rounds = j.value("penalty_rounds", opt.penalty_rounds);
  opt.inner_iterations = j.value("inner_iterations", opt.inner_iterations);
  opt.feasibility_tol = j.value("feasibility_tol", opt.feasibility_tol);
  opt.objective_rel_tol = j.value("objective_rel_tol", opt.objective_rel_tol);
  opt.polish = j.value("polish", opt.polish);
  return opt;
}

std::vector<int> parse_int_schedule(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.empty())
    throw ToolError("validation", ctx + ": expected a nonempty array of integers");
  std::vector<int> out;
  for (const auto& v : j) out.push_back(v.get<int>());
  return out;
}

std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Collects output files and writes the closing manifest. The manifest lists
/// every emitted file; wall_clock_ms is the only field that may differ
/// between identical reruns.
/// Hash of the experiment definition: execution-only keys (worker count,
/// output location) are excluded so identical experiments hash identically.
std::uint64_t config_hash(json effective_config) {
  effective_config.erase("threads");
  effective_config.erase("out");
  return carnot::fnv1a64(effective_config.dump());
}

class Emitter {
 public:
  Emitter(std::string dir, std::string command, const json& effective_config)
      : dir_(std::move(dir)),
        command_(std::move(command)),
        config_hash_(config_hash(effective_config)),
        start_(std::chrono::steady_clock::now()) {
    if (dir_.empty())
      throw ToolError("validation", "an output directory is required (--out or config key \"out\")");
    std::filesystem::create_directories(dir_);
  }

  void text(const std::string& name, const std::string& content) {
    carnot::CsvTable::write_text_file(dir_ + "/" + name, content);
    files_.push_back(name);
  }
  void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }
  void csv_file(const std::string& name, const carnot::CsvTable& t) { text(name, t.to_string()); }

  void finish() {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start_)
                        .count();
    json m;
    m["command"] = command_;
    m["version"] = carnot::kVersion;
    m["config_hash"] = hash_hex(config_hash_);
    m["outputs"] = files_;
    m["wall_clock_ms"] = ms;
    carnot::CsvTable::write_text_file(dir_ + "/manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string dir_;
  std::string command_;
  std::uint64_t config_hash_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> files_;
};

json element_json(const carnot::GroupElement& x) {
  json a = json::array();
  for (int i = 0; i < x.x.size(); ++i) a.push_back(x.x[i]);
  return a;
}

// ---- subcommands ----

int cmd_group_info(const json& cfg) {
  // seed/threads are accepted for flag uniformity; this command uses neither.
  require_keys(cfg, {"group", "seed", "threads", "out"}, "group-info config");
  if (!cfg.contains("group")) throw ToolError("validation", "group-info: missing \"group\"");
  const carnot::CarnotGroup g = parse_group(cfg.at("group"));
  const carnot::ValidationReport rep =
      carnot::CarnotGroup::check(g.layer_dims(), g.structure_constants(), g.horizontal_metric());

  json out;
  out["layer_dims"] = g.layer_dims();
  out["step"] = g.step();
  out["dim"] = g.dim();
  out["homogeneous_dimension"] = g.homogeneous_dimension();
  std::vector<int> sigma;
  for (int i = 0; i < g.dim(); ++i) sigma.push_back(g.homogeneity(i));
  out["homogeneity"] = sigma;
  out["descriptor"] = g.to_json();
  json checks = json::array();
  for (const auto& [name, passed] : rep.checks)
    checks.push_back({{"identity", name}, {"passed", passed}});
  out["validation"] = {{"ok", rep.ok}, {"checks", checks}};

  std::cout << out.dump(2) << "\n";
  if (cfg.contains("out") && !cfg.at("out").get<std::string>().empty()) {
    Emitter em(cfg.at("out").get<std::string>(), "group-info", cfg);
    em.json_file("group_info.json", out);
    em.finish();
  }
  return 0;
}

int cmd_walk(const json& cfg) {
  require_keys(cfg, {"group", "distribution", "n", "m", "trials", "seed", "threads", "out"},
               "walk config");
  const carnot::CarnotGroup g = parse_group(cfg.at("group"));
  const carnot::StepDistribution dist = parse_distribution(cfg.at("distribution"), g);
  const int n = cfg.at("n").get<int>();
  const int m = cfg.value("m", n);
  const std::uint64_t trials = cfg.value("trials", std::uint64_t{1});
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{1});
  const int threads = cfg.value("threads", 0);
  if (trials < 1) throw ToolError("validation", "walk: trials must be >= 1");
  if (n < 1 || m < 1 || m > n) throw ToolError("validation", "walk: need 1 <= m <= n");

  struct Row {
    double gap;
    carnot::GroupElement terminal;
  };
  std::vector<Row> rows(trials);
  carnot::parallel_for(trials, threads, [&](std::uint64_t t) {
    const carnot::WalkRun run = carnot::sample_walk(g, dist, n, seed, t, true);
    rows[t] = {carnot::approximation_gap(g, run, m), run.terminal};
  });

  std::vector<std::string> header = {"seed", "trial", "n", "m", "gap"};
  for (int i = 1; i <= g.dim(); ++i) header.push_back("x_" + std::to_string(i));
  carnot::CsvTable csv(header);
  for (std::uint64_t t = 0; t < trials; ++t) {
    csv.begin_row().col(seed).col(t).col(n).col(m).col(rows[t].gap);
    for (int i = 0; i < g.dim(); ++i) csv.col(rows[t].terminal.x[i]);
  }

  Emitter em(cfg.value("out", std::string{}), "walk", cfg);
  em.csv_file("walks.csv", csv);
  em.finish();
  return 0;
}

int cmd_rate(const json& cfg) {
  require_keys(cfg, {"group", "model", "target", "m_schedule", "optimizer", "seed", "threads", "out"},
               "rate config");
  const carnot::CarnotGroup g = parse_group(cfg.at("group"));
  const carnot::CumulantModel model = parse_distribution(cfg.at("model"), g).cumulant();
  const carnot::GroupElement target = parse_element(cfg.at("target"), g, "target");
  const std::vector<int> schedule = parse_int_schedule(cfg.at("m_schedule"), "m_schedule");
  const carnot::RateOptions opt = parse_optimizer(cfg, cfg.value("seed", std::uint64_t{1}));

  const carnot::RateCurve curve = carnot::rate_limit(g, model, target, schedule, opt);

  json out;
  out["target"] = element_json(target);
  out["model"] = cfg.at("model");
  out["m_schedule"] = schedule;
  out["j_estimate"] = curve.j_estimate;
  out["monotone"] = curve.monotone;
  out["warning"] = curve.warning;
  json pts = json::array();
  for (const auto& p : curve.points) pts.push_back(carnot::rate_result_to_json(p.result));
  out["points"] = pts;

  carnot::CsvTable csv({"m", "value", "residual", "feasible", "best_restart"});
  for (const auto& p : curve.points)
    csv.begin_row()
        .col(p.m)
        .col(p.result.value)
        .col(p.result.residual)
        .col(p.result.feasible ? 1 : 0)
        .col(p.result.best_restart);

  Emitter em(cfg.value("out", std::string{}), "rate", cfg);
  em.json_file("rate.json", out);
  em.csv_file("rate.csv", csv);
  em.finish();

  bool any_feasible = false;
  for (const auto& p : curve.points) any_feasible = any_feasible || p.result.feasible;
  if (!any_feasible)
    throw ToolError("infeasible",
                    "rate: no feasible control on any schedule entry (files written; smallest "
                    "residual " +
                        carnot::fmt_double(curve.points.front().result.residual) + ")");
  return 0;
}

int cmd_mc_slope(const json& cfg) {
  require_keys(cfg,
               {"group", "distribution", "event", "n_schedule", "trials", "reference", "seed",
                "threads", "out"},
               "mc-slope config");
  const carnot::CarnotGroup g = parse_group(cfg.at("group"));
  const carnot::StepDistribution dist = parse_distribution(cfg.at("distribution"), g);
  const carnot::EventSpec event = parse_event(cfg.at("event"), g);
  const std::vector<int> schedule = parse_int_schedule(cfg.at("n_schedule"), "n_schedule");
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{1});
  const int threads = cfg.value("threads", 0);

  std::vector<std::uint64_t> trials;
  if (cfg.at("trials").is_array()) {
    for (const auto& v : cfg.at("trials")) trials.push_back(v.get<std::uint64_t>());
  } else {
    trials.push_back(cfg.at("trials").get<std::uint64_t>());
  }

  carnot::SlopeReport rep = slope_study(g, dist, event, schedule, trials, seed, threads);

  // Reference -inf J over the event region, method chosen by event kind
  // unless the config pins one.
  json refcfg = cfg.value("reference", json::object());
  require_keys(refcfg, {"method", "m", "points", "restarts"}, "reference");
  std::string method = refcfg.value("method", "auto");
  if (method == "auto") {
    switch (event.kind()) {
      case carnot::EventSpec::Kind::GnormExceed: method = "boundary_scan"; break;
      case carnot::EventSpec::Kind::HorizontalExceed: method = "horizontal_scan"; break;
      case carnot::EventSpec::Kind::Ball: method = "rate_at_center"; break;
    }
  }
  const carnot::CumulantModel model = dist.cumulant();
  if (method == "boundary_scan") {
    carnot::RateOptions opt;
    opt.seed = seed;
    opt.restarts = refcfg.value("restarts", 6);
    const carnot::BoundaryScan scan = carnot::boundary_inf_rate(
        g, model, event.threshold(), refcfg.value("m", 16), refcfg.value("points", 64), opt);
    rep.reference = -scan.inf_rate;
    rep.reference_note = "-inf J over the boundary {|x|_G = a}, " +
                         std::to_string(refcfg.value("points", 64)) + "-point scan at m = " +
                         std::to_string(refcfg.value("m", 16));
  } else if (method == "horizontal_scan") {
    rep.reference =
        -carnot::horizontal_inf_rate(g, model, event.threshold(), refcfg.value("points", 64), seed);
    rep.reference_note = "-inf of the step conjugate over {|u|_H = a}";
  } else if (method == "rate_at_center") {
    carnot::RateOptions opt;
    opt.seed = seed;
    opt.restarts = refcfg.value("restarts", 6);
    const carnot::RateResult r =
        carnot::minimize_rate(g, model, event.center(), refcfg.value("m", 16), opt);
    if (r.feasible) {
      rep.reference = -r.value;
      rep.reference_note = "-J at the ball center (inf over the ball is at most J(x0))";
    } else {
      rep.reference_note = "ball center infeasible at m = " + std::to_string(refcfg.value("m", 16));
    }
  } else if (method != "none") {
    throw ToolError("validation", "reference: unknown method '" + method + "'");
  }

  json out;
  out["event"] = cfg.at("event");
  out["n_schedule"] = schedule;
  out["usable"] = rep.usable;
  out["has_slope"] = rep.has_slope;
  out["slope"] = rep.slope;
  out["slope_se"] = rep.slope_se;
  out["ci"] = {rep.ci_lo, rep.ci_hi};
  out["reference"] = rep.reference;
  out["reference_note"] = rep.reference_note;
  json pts = json::array();
  for (const auto& e : rep.points)
    pts.push_back({{"n", e.n},
                   {"trials", e.trials},
                   {"hits", e.hits},
                   {"p_hat", e.p_hat},
                   {"wilson_lo", e.wilson_lo},
                   {"wilson_hi", e.wilson_hi},
                   {"scaled_log", e.scaled_log},
                   {"usable_for_log", e.usable_for_log}});
  out["points"] = pts;

  carnot::CsvTable csv(
      {"n", "trials", "hits", "p_hat", "wilson_lo", "wilson_hi", "scaled_log", "usable"});
  for (const auto& e : rep.points)
    csv.begin_row()
        .col(e.n)
        .col(e.trials)
        .col(e.hits)
        .col(e.p_hat)
        .col(e.wilson_lo)
        .col(e.wilson_hi)
        .col(e.usable_for_log ? carnot::fmt_double(e.scaled_log) : std::string("censored"))
        .col(e.usable_for_log ? 1 : 0);

  // Plot-ready long format: one (n, quantity, value) row per finite value.
  carnot::CsvTable longcsv({"n", "quantity", "value"});
  for (const auto& e : rep.points) {
    longcsv.begin_row().col(e.n).col(std::string("p_hat")).col(e.p_hat);
    longcsv.begin_row().col(e.n).col(std::string("wilson_lo")).col(e.wilson_lo);
    longcsv.begin_row().col(e.n).col(std::string("wilson_hi")).col(e.wilson_hi);
    if (e.hits > 0) {
      longcsv.begin_row().col(e.n).col(std::string("log_p")).col(std::log(e.p_hat));
      longcsv.begin_row().col(e.n).col(std::string("scaled_log")).col(e.scaled_log);
    }
  }

  Emitter em(cfg.value("out", std::string{}), "mc-slope", cfg);
  em.json_file("slope.json", out);
  em.csv_file("estimates.csv", csv);
  em.csv_file("long.csv", longcsv);
  em.finish();
  return 0;
}

int cmd_approx_study(const json& cfg) {
  require_keys(cfg,
               {"group", "distribution", "delta", "n_schedule", "m_list", "trials", "seed",
                "threads", "out"},
               "approx-study config");
  const carnot::CarnotGroup g = parse_group(cfg.at("group"));
  const carnot::StepDistribution dist = parse_distribution(cfg.at("distribution"), g);
  const double delta = cfg.at("delta").get<double>();
  const std::vector<int> schedule = parse_int_schedule(cfg.at("n_schedule"), "n_schedule");
  const std::vector<int> m_list = parse_int_schedule(cfg.at("m_list"), "m_list");
  const std::uint64_t trials = cfg.value("trials", std::uint64_t{200});
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{1});
  const int threads = cfg.value("threads", 0);

  const carnot::DecayStudy study =
      carnot::approximation_decay_study(g, dist, delta, schedule, m_list, trials, seed, threads);

  carnot::CsvTable csv(
      {"n", "m", "trials", "hits", "p_exceed", "censored", "scaled_log", "median_gap"});
  json rows = json::array();
  for (const auto& r : study.rows) {
    csv.begin_row()
        .col(r.n)
        .col(r.m)
        .col(r.trials)
        .col(r.hits)
        .col(r.p_exceed)
        .col(r.censored ? 1 : 0)
        .col(r.censored ? std::string("censored") : carnot::fmt_double(r.scaled_log))
        .col(r.median_gap);
    rows.push_back({{"n", r.n},
                    {"m", r.m},
                    {"trials", r.trials},
                    {"hits", r.hits},
                    {"p_exceed", r.p_exceed},
                    {"censored", r.censored},
                    {"scaled_log", r.scaled_log},
                    {"median_gap", r.median_gap}});
  }
  json out;
  out["delta"] = study.delta;
  out["rows"] = rows;

  Emitter em(cfg.value("out", std::string{}), "approx-study", cfg);
  em.json_file("decay.json", out);
  em.csv_file("decay.csv", csv);
  em.finish();
  return 0;
}

int cmd_diag(const json& cfg) {
  // threads is accepted for flag uniformity; diagnostics run serially.
  require_keys(cfg, {"windows", "mgf", "subexp", "seed", "threads", "out"}, "diag config");
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{1});
  json out;

  carnot::CsvTable csv({"k", "l", "hs", "hs_variant", "op_bound", "op_estimate"});
  if (cfg.contains("windows")) {
    json rows = json::array();
    for (const auto& w : cfg.at("windows")) {
      if (!w.is_array() || w.size() != 2)
        throw ToolError("validation", "diag: windows entries are [k, l] pairs");
      const int k = w[0].get<int>(), l = w[1].get<int>();
      const carnot::WindowNorms norms = carnot::window_matrix_norms(k, l);
      const double op_est =
          carnot::operator_norm_estimate(carnot::window_matrix(k, l, l), 200, seed);
      csv.begin_row()
          .col(k)
          .col(l)
          .col(norms.hs)
          .col(norms.hs_variant)
          .col(norms.op_bound)
          .col(op_est);
      rows.push_back({{"k", k},
                      {"l", l},
                      {"hs", norms.hs},
                      {"hs_variant", norms.hs_variant},
                      {"op_bound", norms.op_bound},
                      {"op_estimate", op_est},
                      {"nonzero_upper", norms.nonzero_upper}});
    }
    out["windows"] = rows;
  }

  if (cfg.contains("mgf")) {
    const json& m = cfg.at("mgf");
    require_keys(m, {"k", "l", "lambdas", "trials"}, "mgf");
    std::vector<double> lambdas;
    for (const auto& v : m.at("lambdas")) lambdas.push_back(v.get<double>());
    const carnot::MgfCheck chk = carnot::mgf_bound_check(
        m.at("k").get<int>(), m.at("l").get<int>(), lambdas,
        m.value("trials", std::uint64_t{10000}), seed);
    json pts = json::array();
    for (const auto& p : chk.points)
      pts.push_back({{"lambda", p.lambda},
                     {"mgf", p.mgf},
                     {"log_mgf", p.log_mgf},
                     {"pruned", p.pruned}});
    out["mgf"] = {{"k", chk.k},
                  {"l", chk.l},
                  {"trials", chk.trials},
                  {"curvature", chk.curvature},
                  {"pruned_points", chk.pruned_points},
                  {"points", pts}};
  }

  if (cfg.contains("subexp")) {
    const json& s = cfg.at("subexp");
    require_keys(s, {"parts", "independent"}, "subexp");
    std::vector<carnot::SubExpParams> parts;
    for (const auto& p : s.at("parts")) {
      if (!p.is_array() || p.size() != 2)
        throw ToolError("validation", "diag: subexp parts are [nu2, alpha] pairs");
      parts.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    const bool indep = s.value("independent", true);
    const carnot::SubExpParams c = carnot::combine_subexp(parts, indep);
    out["subexp"] = {{"independent", indep}, {"nu2", c.nu2}, {"alpha", c.alpha}};
  }

  Emitter em(cfg.value("out", std::string{}), "diag", cfg);
  em.json_file("diag.json", out);
  if (cfg.contains("windows")) em.csv_file("windows.csv", csv);
  em.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random walks and rate functions on Carnot groups"};
  app.set_version_flag("--version", std::string("carnot ") + carnot::kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir, group_name, dist_kind;
  std::optional<std::uint64_t> seed_flag;
  std::optional<int> threads_flag;
  double dist_radius = 1.0;
  int walk_n = 0, walk_m = 0;
  std::uint64_t walk_trials = 0;

  app.add_option("--config", config_path, "JSON config file")->group("Global");
  app.add_option("--seed", seed_flag, "master seed (overrides config)")->group("Global");
  app.add_option("--threads", threads_flag,
                 "worker count (overrides config; CARNOT_THREADS sets the default)")
      ->group("Global");
  app.add_option("--out", out_dir, "output directory (overrides config)")->group("Global");

  auto* sub_info = app.add_subcommand("group-info", "describe and validate a group");
  sub_info->add_option("--group", group_name, "builtin name or descriptor path");
  auto* sub_walk = app.add_subcommand("walk", "sample rescaled walks, tabulate block gaps");
  sub_walk->add_option("--group", group_name, "builtin name or descriptor path");
  sub_walk->add_option("--dist", dist_kind, "step distribution kind");
  sub_walk->add_option("--radius", dist_radius, "step distribution radius");
  sub_walk->add_option("--n", walk_n, "steps per walk");
  sub_walk->add_option("--m", walk_m, "block count for the gap column");
  sub_walk->add_option("--trials", walk_trials, "number of walks");
  auto* sub_rate = app.add_subcommand("rate", "minimize the discrete rate over an m schedule");
  auto* sub_mc = app.add_subcommand("mc-slope", "rare-event decay slope study");
  auto* sub_approx = app.add_subcommand("approx-study", "block approximation decay study");
  auto* sub_diag = app.add_subcommand("diag", "window matrix and tail parameter diagnostics");
  // Global flags remain usable after the subcommand name.
  for (auto* s : {sub_info, sub_walk, sub_rate, sub_mc, sub_approx, sub_diag}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    json err;
    err["error"] = {{"code", "config"}, {"message", e.what()}};
    std::cout << err.dump(2) << "\n";
    return e.get_exit_code();
  }

  try {
    json cfg = config_path.empty() ? json::object() : load_config(config_path);
    if (!cfg.is_object()) throw ToolError("validation", "config: expected a JSON object");
    if (seed_flag) cfg["seed"] = *seed_flag;
    if (threads_flag) cfg["threads"] = *threads_flag;
    if (!out_dir.empty()) cfg["out"] = out_dir;
    if (!group_name.empty()) cfg["group"] = group_name;

    if (sub_info->parsed()) return cmd_group_info(cfg);
    if (sub_walk->parsed()) {
      if (!dist_kind.empty()) {
        json d;
        d["kind"] = dist_kind;
        if (sub_walk->count("--radius") > 0) d["radius"] = dist_radius;
        cfg["distribution"] = d;
      }
      if (walk_n > 0) cfg["n"] = walk_n;
      if (walk_m > 0) cfg["m"] = walk_m;
      if (walk_trials > 0) cfg["trials"] = walk_trials;
      return cmd_walk(cfg);
    }
    if (sub_rate->parsed()) return cmd_rate(cfg);
    if (sub_mc->parsed()) return cmd_mc_slope(cfg);
    if (sub_approx->parsed()) return cmd_approx_study(cfg);
    if (sub_diag->parsed()) return cmd_diag(cfg);
    return 1;  // unreachable: require_subcommand(1)
  } catch (const ToolError& e) {
    json err;
    err["error"] = {{"code", e.code}, {"message", e.what()}};
    std::cout << err.dump(2) << "\n";
    return 1;
  } catch (const json::exception& e) {
    json err;
    err["error"] = {{"code", "validation"}, {"message", e.what()}};
    std::cout << err.dump(2) << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    json err;
    err["error"] = {{"code", "validation"}, {"message", e.what()}};
    std::cout << err.dump(2) << "\n";
    return 1;
  } catch (const std::exception& e) {
    json err;
    err["error"] = {{"code", "runtime"}, {"message", e.what()}};
    std::cout << err.dump(2) << "\n";
    return 1;
  }
}
