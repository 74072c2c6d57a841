#include "commands.hpp"

#include "mvlab/bsde.hpp"
#include "mvlab/control.hpp"
#include "mvlab/coupling.hpp"
#include "mvlab/csv.hpp"
#include "mvlab/ebsde.hpp"
#include "mvlab/ltb.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/model.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/scenario.hpp"
#include "mvlab/sde.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <set>
#include <thread>

#include <unistd.h>

#ifndef MVLAB_VERSION
#define MVLAB_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace mvlab::cli {

namespace {

struct Settings {
  std::string subcommand;
  std::string scenario;
  std::string out;
  std::uint64_t seed = 42;
  unsigned threads = 1;
  std::optional<std::size_t> particles;
  std::optional<double> dt;
  std::optional<double> horizon;
};

class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Context {
 public:
  Context(Settings s, Scenario sc) : set_(std::move(s)), sc_(std::move(sc)) {}

  const Settings& settings() const { return set_; }
  const Scenario& scenario() const { return sc_; }
  const ProblemSpec& spec() const { return sc_.spec; }
  const std::string& cmd() const { return set_.subcommand; }
  std::uint64_t seed() const { return set_.seed; }

  std::ofstream open(const std::string& name) {
    files_.push_back(name);
    std::ofstream os(fs::path(set_.out) / name);
    if (!os) throw std::runtime_error("cannot write " + (fs::path(set_.out) / name).string());
    return os;
  }

  double number(const std::string& key, double fallback) {
    const double v = sc_.run_number(cmd(), key, fallback);
    record(key, format_double(v));
    return v;
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    const auto v = sc_.run_numbers(cmd(), key, std::move(fallback));
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    record(key, s);
    return v;
  }
  std::string text(const std::string& key, const std::string& fallback) {
    const auto v = sc_.run_get(cmd(), key, fallback);
    record(key, v);
    return v;
  }
  std::size_t particles(std::size_t fallback) {
    const auto v = set_.particles ? *set_.particles : static_cast<std::size_t>(number("particles", static_cast<double>(fallback)));
    record("particles", std::to_string(v));
    return v;
  }
  double dt(double fallback) {
    const double v = set_.dt ? *set_.dt : number("dt", fallback);
    record("dt", format_double(v));
    return v;
  }
  double horizon(double fallback) {
    const double v = set_.horizon ? *set_.horizon : number("horizon", fallback);
    record("horizon", format_double(v));
    return v;
  }
  std::vector<double> point(const std::string& key) {
    auto v = numbers(key, std::vector<double>(static_cast<std::size_t>(spec().dim), 0.0));
    if (static_cast<int>(v.size()) != spec().dim)
      throw std::invalid_argument(key + " must have " + std::to_string(spec().dim) + " components");
    return v;
  }

  void check(const std::string& name, bool ok) {
    checks_.emplace_back(name, ok);
    std::cout << (ok ? "PASS " : "FAIL ") << name << '\n';
  }
  bool all_passed() const {
    for (const auto& c : checks_)
      if (!c.second) return false;
    return true;
  }
  void stream(Stream s) { streams_.insert(static_cast<int>(s)); }

  void write_manifest(double wall_seconds, const std::string& status) {
    std::ofstream os(fs::path(set_.out) / "manifest");
    os << "version=" << MVLAB_VERSION << '\n';
    os << "subcommand=" << set_.subcommand << '\n';
    os << "scenario=" << set_.scenario << '\n';
    os << "scenario_copy=scenario.scn\n";
    os << "spec=" << spec().name << '\n';
    os << "seed=" << set_.seed << '\n';
    os << "threads=" << set_.threads << '\n';
    os << "out=" << set_.out << '\n';
    for (const auto& [k, v] : params_) os << "param." << k << '=' << v << '\n';
    os << "rng=philox4x32-10\n";
    os << "rng_streams=";
    bool first = true;
    for (int s : streams_) {
      os << (first ? "" : ",") << s;
      first = false;
    }
    os << '\n';
    for (const auto& [name, ok] : checks_) os << "check." << name << '=' << (ok ? "pass" : "fail") << '\n';
    os << "status=" << status << '\n';
    os << "wall_seconds=" << format_double(std::round(wall_seconds * 1000.0) / 1000.0) << '\n';
    os << "file=scenario.scn\n";
    for (const auto& f : files_) os << "file=" << f << '\n';
  }

 private:
  void record(const std::string& key, const std::string& value) { params_[key] = value; }

  Settings set_;
  Scenario sc_;
  std::vector<std::string> files_;
  std::map<std::string, std::string> params_;
  std::vector<std::pair<std::string, bool>> checks_;
  std::set<int> streams_;
};


// theta = dirac (at run.theta_at) or mu-star.
struct Theta {
  EmpiricalMeasure measure;
  bool stationary = false;
  MeasureSummary summary;
};

Theta resolve_theta(Context& ctx, std::size_t n, double dt) {
  const auto kind = ctx.text("theta", "dirac");
  Theta th;
  if (kind == "dirac") {
    th.measure = EmpiricalMeasure::dirac(ctx.point("theta_at"));
  } else if (kind == "mu-star") {
    const double rate = ctx.spec().nominal_rate();
    const double burn = ctx.number("burn", rate > 0 ? 20.0 / rate : 20.0);
    ctx.stream(Stream::kInitial);
    ctx.stream(Stream::kBrownian);
    auto inv = invariant_measure(ctx.spec(), n, dt, burn, ctx.seed());
    th.measure = inv.mu_star;
    th.summary = inv.summary;
    th.stationary = true;
  } else {
    throw std::invalid_argument("theta must be 'dirac' or 'mu-star', got '" + kind + "'");
  }
  return th;
}

MeasureFlow resolve_flow(Context& ctx, const Theta& th, std::size_t n, double dt, double horizon) {
  if (th.stationary)
    return MeasureFlow::stationary(std::make_shared<const EmpiricalMeasure>(th.measure), th.summary);
  ctx.stream(Stream::kInitial);
  ctx.stream(Stream::kBrownian);
  return theta_flow(ctx.spec(), th.measure, dt, horizon, n, ctx.seed());
}

void write_report(Context& ctx, const std::string& name, const std::string& body) {
  auto os = ctx.open(name);
  os << body;
}

void cmd_audit(Context& ctx) {
  const auto n = static_cast<std::size_t>(ctx.number("samples", 1000));
  ctx.stream(Stream::kAudit);
  const auto rep = audit(ctx.spec(), n, ctx.seed());
  {
    auto os = ctx.open("audit.csv");
    write_audit_csv(os, rep);
  }
  std::ostringstream r;
  r << "lambda=" << format_double(rep.lambda) << '\n'
    << "weak_rate=" << format_double(rep.weak_rate) << '\n'
    << "interaction_bound=" << format_double(rep.interaction_bound) << '\n'
    << "driver_growth=" << format_double(rep.driver_growth) << '\n'
    << "terminal_growth=" << format_double(rep.terminal_growth) << '\n';
  write_report(ctx, "audit_report.txt", r.str());
  for (const auto& c : rep.checks)
    if (c.verdict != Verdict::kIndeterminate) ctx.check("audit." + c.name, c.verdict == Verdict::kPass);
}

void cmd_simulate(Context& ctx) {
  const auto n = ctx.particles(1000);
  const double dt = ctx.dt(0.01), horizon = ctx.horizon(1.0);
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  MvOptions mo;
  mo.record_every = static_cast<std::size_t>(ctx.number("record_every", static_cast<double>(std::max<std::size_t>(1, steps / 100))));
  const auto theta = EmpiricalMeasure::dirac(ctx.point("theta_at"));
  ctx.stream(Stream::kInitial);
  ctx.stream(Stream::kBrownian);
  const auto run = simulate_mv(ctx.spec(), theta, dt, horizon, n, ctx.seed(), mo);
  {
    auto os = ctx.open("paths.csv");
    write_paths_csv(os, run.paths);
  }
  {
    auto os = ctx.open("flow.csv");
    write_flow_csv(os, run.flow);
  }
  ctx.check("simulate.finite", run.final_state.states.allFinite());
}

void cmd_invariant(Context& ctx) {
  const auto n = ctx.particles(10000);
  const double dt = ctx.dt(0.01);
  const double rate = ctx.spec().nominal_rate();
  const double burn = ctx.number("burn", rate > 0 ? 20.0 / rate : 20.0);
  ctx.stream(Stream::kInitial);
  ctx.stream(Stream::kBrownian);
  const auto inv = invariant_measure(ctx.spec(), n, dt, burn, ctx.seed());
  {
    auto os = ctx.open("mu_star.csv");
    write_measure_csv(os, inv.mu_star);
  }
  std::ostringstream r;
  r << "second_moment=" << format_double(inv.summary.second_moment) << '\n';
  for (std::size_t j = 0; j < inv.summary.mean.size(); ++j) r << "mean" << j + 1 << '=' << format_double(inv.summary.mean[j]) << '\n';
  r << "stationarity_w2=" << format_double(inv.stationarity_w2) << '\n' << "tolerance=" << format_double(inv.tolerance) << '\n';
  if (!inv.warning.empty()) r << "warning=" << inv.warning << '\n';
  write_report(ctx, "invariant_report.txt", r.str());
  ctx.check("invariant.stationary", !inv.nonstationary);
}

void cmd_coupling(Context& ctx) {
  const auto& spec = ctx.spec();
  const double dt = ctx.dt(0.01);
  const auto x0 = ctx.point("x0");
  const double gap = ctx.number("gap", spec.regime == Regime::kWeakDissipative ? 4.0 : 1.0);
  auto x1 = x0;
  x1[0] += gap;
  if (spec.regime == Regime::kWeakDissipative) {
    const auto n = ctx.particles(1000);
    const double horizon = ctx.horizon(10.0);
    const double delta = ctx.number("delta", 0.06);
    const auto n_flow = static_cast<std::size_t>(ctx.number("flow_particles", 2000));
    ctx.stream(Stream::kInitial);
    ctx.stream(Stream::kBrownian);
    for (auto s : {Stream::kCouplingReflected, Stream::kCouplingShared, Stream::kCouplingResidual}) ctx.stream(s);
    const auto f0 = theta_flow(spec, EmpiricalMeasure::dirac(x0), dt, horizon, n_flow, ctx.seed());
    const auto f1 = theta_flow(spec, EmpiricalMeasure::dirac(x1), dt, horizon, n_flow, ctx.seed() + 1);
    const auto run = simulate_reflection_coupling(spec, f0, f1, x0, x1, delta, dt, horizon, n, ctx.seed());
    {
      auto os = ctx.open("coupling.csv");
      write_coupling_csv(os, run);
    }
    const auto c = LyapunovConstants::from(spec.constants);
    const auto table = build_lyapunov(c, ctx.number("lyapunov_r_max", 2.0 * std::max(1.0, c.ball_radius)),
                                      static_cast<std::size_t>(ctx.number("lyapunov_grid", 1000)));
    {
      auto os = ctx.open("lyapunov.csv");
      write_lyapunov_csv(os, table);
    }
    const auto check = verify_lyapunov_inequality(table, [&](double r) { return kappa_star(c, r); });
    std::ostringstream r;
    r << "rate=" << format_double(run.rate) << '\n'
      << "fit_start=" << format_double(run.fit_start) << '\n'
      << "monotone_after_transient=" << (run.monotone_after_transient ? 1 : 0) << '\n'
      << "worst_increase=" << format_double(run.worst_increase) << '\n'
      << "lyapunov_worst_relative=" << format_double(check.worst_relative) << '\n'
      << "dphi0=" << format_double(table.dphi0()) << '\n';
    write_report(ctx, "coupling_report.txt", r.str());
    ctx.check("coupling.rate_positive", run.rate > 0.0);
    ctx.check("coupling.monotone", run.monotone_after_transient);
    ctx.check("coupling.lyapunov", check.passed());
  } else {
    const auto n = ctx.particles(10000);
    const double horizon = ctx.horizon(2.0);
    ctx.stream(Stream::kInitial);
    ctx.stream(Stream::kBrownian);
    const auto res = contraction_rate(spec, EmpiricalMeasure::dirac(x0), EmpiricalMeasure::dirac(x1), dt, horizon, n,
                                      ctx.seed());
    {
      auto os = ctx.open("contraction.csv");
      CsvWriter w(os);
      w.header({"t", "w2"});
      for (std::size_t i = 0; i < res.times.size(); ++i) w.field(res.times[i]).field(res.distances[i]).end();
    }
    std::ostringstream r;
    r << "rate=" << format_double(res.rate) << '\n' << "nominal_rate=" << format_double(spec.nominal_rate()) << '\n';
    if (!res.note.empty()) r << "note=" << res.note << '\n';
    write_report(ctx, "contraction_report.txt", r.str());
    ctx.check("contraction.rate_positive", res.rate > 0.0);
  }
}

BsdeOptions bsde_options(Context& ctx) {
  BsdeOptions bo;
  bo.degree = static_cast<int>(ctx.number("degree", 0));
  bo.picard = static_cast<std::size_t>(ctx.number("picard", 1));
  return bo;
}

void cmd_bsde(Context& ctx) {
  const auto& spec = ctx.spec();
  const auto n = ctx.particles(10000);
  const double dt = ctx.dt(0.01), horizon = ctx.horizon(1.0);
  const auto x0 = ctx.point("x0");
  const auto th = resolve_theta(ctx, n, dt);
  const auto flow = resolve_flow(ctx, th, n, dt, horizon);
  ctx.stream(Stream::kDecoupled);
  ctx.stream(Stream::kRegressionCloud);
  const auto sol = solve_finite_bsde(spec, flow, x0, horizon, dt, n, ctx.seed(), bsde_options(ctx));
  std::ostringstream r;
  write_bsde_report(r, sol);
  if (!spec.driver_depends_on_z) {
    ctx.stream(Stream::kMisc);
    const auto mc = plain_monte_carlo(spec, flow, x0, horizon, dt, n, ctx.seed() + 1);
    r << "plain_mc=" << format_double(mc.mean) << '\n' << "plain_mc_stderr=" << format_double(mc.stderr_) << '\n';
    write_report(ctx, "bsde_report.txt", r.str());
    ctx.check("bsde.plain_mc_agreement", std::abs(sol.y0 - mc.mean) <= 3.0 * std::hypot(sol.y0_stderr, mc.stderr_));
  } else {
    write_report(ctx, "bsde_report.txt", r.str());
  }
  {
    auto os = ctx.open("bsde_u.csv");
    write_regression_csv(os, sol.u);
  }
  {
    auto os = ctx.open("bsde_z.csv");
    write_regression_csv(os, sol.z);
  }
  ctx.check("bsde.picard", !sol.picard_warning);
}

ErgodicSolution ergodic(Context& ctx) {
  ErgodicOptions eo;
  eo.n_particles = ctx.particles(10000);
  eo.n_mu_star = static_cast<std::size_t>(ctx.number("mu_star_particles", static_cast<double>(eo.n_particles)));
  eo.dt = ctx.dt(0.01);
  eo.degree = static_cast<int>(ctx.number("degree", 0));
  eo.alphas = ctx.numbers("alphas", eo.alphas);
  for (auto s : {Stream::kInitial, Stream::kBrownian, Stream::kDecoupled, Stream::kRegressionCloud, Stream::kAudit})
    ctx.stream(s);
  return extract_ergodic(ctx.spec(), eo, ctx.seed());
}

void write_ergodic_files(Context& ctx, const ErgodicSolution& erg) {
  {
    auto os = ctx.open("ergodic_report.txt");
    write_ergodic_report(os, erg);
  }
  {
    auto os = ctx.open("alpha_trace.csv");
    write_alpha_trace_csv(os, erg);
  }
  {
    auto os = ctx.open("mu_star.csv");
    write_measure_csv(os, erg.mu_star);
  }
  {
    auto os = ctx.open("u_bar.csv");
    write_regression_csv(os, erg.u_bar);
  }
  {
    auto os = ctx.open("zeta_bar.csv");
    write_regression_csv(os, erg.zeta_bar);
  }
}

void cmd_ebsde(Context& ctx) {
  const auto erg = ergodic(ctx);
  write_ergodic_files(ctx, erg);
  std::vector<double> origin(static_cast<std::size_t>(ctx.spec().dim), 0.0);
  ctx.check("ebsde.stable_trace", !erg.unstable);
  ctx.check("ebsde.normalization", std::abs(erg.u_bar_at(origin)) <= 1e-12);
  ctx.check("ebsde.self_consistency", std::abs(erg.self_consistency - erg.lambda) <= 0.05);
  ctx.check("ebsde.two_anchor", std::abs(erg.lambda_second_anchor - erg.lambda) <= 0.05);
}

LtbOptions ltb_options(Context& ctx) {
  LtbOptions lo;
  lo.n_particles = ctx.particles(10000);
  lo.dt = ctx.dt(0.01);
  lo.degree = static_cast<int>(ctx.number("degree", 0));
  lo.picard = static_cast<std::size_t>(ctx.number("picard", 1));
  lo.seed = ctx.seed();
  lo.noise_seeds = static_cast<std::size_t>(ctx.number("noise_seeds", 3));
  return lo;
}

ProblemSpec ltb_spec(Context& ctx, const ErgodicSolution& erg) {
  const auto kind = ctx.text("terminal", "model");
  if (kind == "model") return ctx.spec();
  if (kind == "corrector") return with_corrector_terminal(ctx.spec(), erg);
  throw std::invalid_argument("run.terminal must be 'model' or 'corrector'");
}

void cmd_ltb1(Context& ctx) {
  const auto lo = ltb_options(ctx);
  const auto horizons = ctx.numbers("horizons", {5, 10, 20});
  const auto x0 = ctx.point("x0");
  double lambda = ctx.number("lambda", std::nan(""));
  if (std::isnan(lambda)) {
    const auto erg = ergodic(ctx);
    write_ergodic_files(ctx, erg);
    lambda = erg.lambda;
  }
  const auto th = resolve_theta(ctx, lo.n_particles, lo.dt);
  const auto flow = resolve_flow(ctx, th, lo.n_particles, lo.dt, horizons.back());
  const auto res = ltb1_experiment(ctx.spec(), x0, flow, horizons, lambda, lo);
  {
    auto os = ctx.open("ltb1.csv");
    write_decay_csv(os, res.fit);
  }
  std::ostringstream r;
  r << "lambda=" << format_double(lambda) << '\n';
  write_decay_report(r, res.fit);
  r << "envelope=" << format_double(res.envelope) << '\n';
  write_report(ctx, "ltb1_report.txt", r.str());
  ctx.check("ltb1.envelope", res.envelope_ok);
}

void cmd_ltb2(Context& ctx) {
  const auto lo = ltb_options(ctx);
  const auto horizons = ctx.numbers("horizons", {2, 4, 6, 8});
  const auto x0 = ctx.point("x0");
  const auto erg = ergodic(ctx);
  write_ergodic_files(ctx, erg);
  const auto spec = ltb_spec(ctx, erg);
  const auto th = resolve_theta(ctx, lo.n_particles, lo.dt);
  const auto flow = resolve_flow(ctx, th, lo.n_particles, lo.dt, horizons.back());
  const auto res = ltb2_experiment(spec, x0, flow, horizons, erg, lo);
  {
    auto os = ctx.open("ltb2.csv");
    write_decay_csv(os, res.fit);
  }
  std::ostringstream r;
  r << "u_bar_x0=" << format_double(res.u_bar_x0) << '\n';
  write_decay_report(r, res.fit);
  write_report(ctx, "ltb2_report.txt", r.str());
  ctx.check("ltb2.rate", res.fit.rate_indeterminate || res.fit.rate > 0.0);
}

void cmd_ltb3(Context& ctx) {
  const auto lo = ltb_options(ctx);
  const auto horizons = ctx.numbers("horizons", {2, 4, 6, 8});
  const auto x0 = ctx.point("x0");
  const auto erg = ergodic(ctx);
  write_ergodic_files(ctx, erg);
  const auto spec = ltb_spec(ctx, erg);
  const auto th = resolve_theta(ctx, lo.n_particles, lo.dt);
  const auto flow = resolve_flow(ctx, th, lo.n_particles, lo.dt, horizons.back());
  const auto res = ltb3_experiment(spec, x0, flow, horizons, erg, lo);
  {
    auto os = ctx.open("ltb3_gradient.csv");
    write_decay_csv(os, res.gradient);
  }
  {
    auto os = ctx.open("ltb3_z.csv");
    write_decay_csv(os, res.z);
  }
  std::ostringstream r;
  write_decay_report(r, res.gradient, "gradient.");
  write_decay_report(r, res.z, "z.");
  write_report(ctx, "ltb3_report.txt", r.str());
  ctx.check("ltb3.gradient_rate", res.gradient.rate_indeterminate || res.gradient.rate > 0.0);
  ctx.check("ltb3.z_rate", res.z.rate_indeterminate || res.z.rate > 0.0);
}

void cmd_control(Context& ctx) {
  const auto& spec = ctx.spec();
  if (!spec.control) throw ConfigError("the control subcommand needs a control set in the scenario");
  const auto lo = ltb_options(ctx);
  const double horizon = ctx.horizon(2.0);
  const double t_long = ctx.number("ergodic_horizon", 40.0);
  const auto x0 = ctx.point("x0");
  const auto n_random = static_cast<std::size_t>(ctx.number("random_controls", 10));
  const auto erg = ergodic(ctx);
  write_ergodic_files(ctx, erg);
  const auto flow = erg.stationary_flow();

  BsdeOptions bo;
  bo.degree = lo.degree;
  bo.picard = lo.picard;
  const auto sol = solve_finite_bsde(spec, flow, x0, horizon, lo.dt, lo.n_particles, lo.seed, bo);
  ctx.stream(Stream::kControl);
  std::vector<std::string> labels;
  std::vector<CostReport> costs;
  auto add = [&](const std::string& label, const ControlPolicy& p) {
    labels.push_back(label);
    costs.push_back(evaluate_cost_finite(spec, p, x0, flow, horizon, lo.dt, lo.n_particles, lo.seed, sol.y0,
                                         sol.y0_stderr));
  };
  add("optimal", ControlPolicy::finite_horizon(sol));
  add("zero", ControlPolicy::constant_action(std::vector<double>(static_cast<std::size_t>(spec.control->dim()), 0.0)));
  const auto& cs = *spec.control;
  for (std::size_t i = 0; i < n_random; ++i) {
    std::vector<double> a(static_cast<std::size_t>(cs.dim()));
    for (std::size_t j = 0; j < a.size(); ++j)
      a[j] = cs.lo[j] + (cs.hi[j] - cs.lo[j]) * uniform({lo.seed, Stream::kControl, i, 1000000 + j});
    add("constant_" + std::to_string(i), ControlPolicy::constant_action(a));
  }
  const auto erg_cost = evaluate_cost_ergodic(spec, ControlPolicy::ergodic(erg.zeta_bar), x0, flow, t_long, lo.dt,
                                              lo.n_particles, lo.seed, erg.lambda, erg.lambda_stderr);
  labels.push_back("ergodic_feedback");
  costs.push_back(erg_cost);
  {
    auto os = ctx.open("control_costs.csv");
    write_cost_csv(os, labels, costs);
  }
  const auto h = hamiltonian(spec, x0, flow.summary(0), sol.z0);
  std::ostringstream r;
  r << "y0=" << format_double(sol.y0) << '\n'
    << "y0_stderr=" << format_double(sol.y0_stderr) << '\n'
    << "lambda=" << format_double(erg.lambda) << '\n'
    << "hamiltonian_at_x0=" << format_double(h.value) << '\n'
    << "feedback_at_x0=" << format_double(h.a[0]) << '\n';
  write_report(ctx, "control_report.txt", r.str());
  ctx.check("control.optimal_matches_y0", costs[0].matches());
  bool dominated = true;
  for (std::size_t i = 1; i + 1 < costs.size(); ++i) dominated = dominated && costs[i].dominates();
  ctx.check("control.comparison", dominated);
  ctx.check("control.ergodic_feedback", std::abs(erg_cost.gap) <= 0.05);
}

// Collects check lines from OUT/*/manifest.
void cmd_report(Context& ctx) {
  const fs::path root(ctx.settings().out);
  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "manifest")) manifests.push_back(e.path() / "manifest");
  std::sort(manifests.begin(), manifests.end());
  auto os = ctx.open("summary.csv");
  CsvWriter w(os);
  w.header({"run", "subcommand", "check", "verdict"});
  for (const auto& m : manifests) {
    std::ifstream in(m);
    std::string line, sub;
    while (std::getline(in, line)) {
      if (line.rfind("subcommand=", 0) == 0) sub = line.substr(11);
      if (line.rfind("check.", 0) == 0) {
        const auto eq = line.find('=');
        const auto name = line.substr(6, eq - 6);
        const bool ok = line.substr(eq + 1) == "pass";
        w.field(m.parent_path().filename().string()).field(sub).field(name).field(ok ? "pass" : "fail").end();
        ctx.check(m.parent_path().filename().string() + "." + name, ok);
      }
    }
  }
}

using Command = void (*)(Context&);
const std::vector<std::pair<std::string, Command>>& commands() {
  static const std::vector<std::pair<std::string, Command>> table = {
      {"audit", cmd_audit}, {"simulate", cmd_simulate}, {"invariant", cmd_invariant}, {"coupling", cmd_coupling},
      {"bsde", cmd_bsde},   {"ebsde", cmd_ebsde},       {"ltb1", cmd_ltb1},           {"ltb2", cmd_ltb2},
      {"ltb3", cmd_ltb3},   {"control", cmd_control},   {"report", cmd_report},
  };
  return table;
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read manifest " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.rfind("file=", 0) == 0) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

int execute(Settings set) {
  const auto t0 = std::chrono::steady_clock::now();
  set_thread_count(set.threads);
  Scenario sc;
  if (!set.scenario.empty()) {
    sc = load_scenario(set.scenario);
  } else if (set.subcommand == "report") {
    sc = parse_scenario("[model]\npreset = ou-attract\n", "<none>");
  } else {
    throw ConfigError("--scenario is required for '" + set.subcommand + "'");
  }
  fs::create_directories(set.out);
  if (set.subcommand != "report" && fs::absolute(set.scenario) != fs::absolute(fs::path(set.out) / "scenario.scn"))
    fs::copy_file(set.scenario, fs::path(set.out) / "scenario.scn", fs::copy_options::overwrite_existing);
  else if (set.subcommand == "report")
    std::ofstream(fs::path(set.out) / "scenario.scn") << sc.text;
  Context ctx(set, std::move(sc));
  Command fn = nullptr;
  for (const auto& [name, f] : commands())
    if (name == set.subcommand) fn = f;
  if (!fn) throw ConfigError("unknown subcommand '" + set.subcommand + "'");
  std::string status = "ok";
  int code = 0;
  try {
    fn(ctx);
    if (!ctx.all_passed()) {
      status = "checks-failed";
      code = 2;
    }
  } catch (...) {
    ctx.write_manifest(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), "error");
    throw;
  }
  ctx.write_manifest(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), status);
  return code;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Numerical experiments for ergodic McKean-Vlasov BSDEs", "mvlab"};
  app.set_version_flag("--version", std::string(MVLAB_VERSION));
  Settings set;
  const char* env_out = std::getenv("MVLAB_OUT");
  set.out = env_out && *env_out ? env_out : "mvlab-out";
  set.threads = std::max(1u, std::thread::hardware_concurrency());
  std::string from_manifest;
  std::size_t particles = 0;
  double dt = 0.0, horizon = 0.0;

  app.add_option("--scenario", set.scenario, "Scenario file");
  app.add_option("--out", set.out, "Output directory (default $MVLAB_OUT or ./mvlab-out)");
  app.add_option("--seed", set.seed, "Root seed")->capture_default_str();
  app.add_option("--threads", set.threads, "Worker threads")->check(CLI::PositiveNumber);
  auto* p_opt = app.add_option("--particles", particles, "Particle / path count")->check(CLI::PositiveNumber);
  auto* dt_opt = app.add_option("--dt", dt, "Time step")->check(CLI::PositiveNumber);
  auto* h_opt = app.add_option("--horizon", horizon, "Time horizon")->check(CLI::PositiveNumber);
  app.add_option("--from-manifest", from_manifest, "Rerun the experiment recorded in a manifest");
  for (const auto& [name, fn] : commands()) app.add_subcommand(name, "run the " + name + " pipeline")->fallthrough();
  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (!from_manifest.empty()) {
      const auto kv = read_manifest(from_manifest);
      const auto dir = fs::path(from_manifest).parent_path();
      Settings rerun;
      rerun.subcommand = kv.at("subcommand");
      rerun.scenario = (dir / kv.at("scenario_copy")).string();
      rerun.seed = std::stoull(kv.at("seed"));
      rerun.threads = app.count("--threads") ? set.threads : static_cast<unsigned>(std::stoul(kv.at("threads")));
      rerun.out = app.count("--out") ? set.out : kv.at("out");
      if (kv.count("param.particles")) rerun.particles = std::stoull(kv.at("param.particles"));
      if (kv.count("param.dt")) rerun.dt = std::stod(kv.at("param.dt"));
      if (kv.count("param.horizon")) rerun.horizon = std::stod(kv.at("param.horizon"));
      if (fs::exists(rerun.out) && fs::equivalent(rerun.out, dir)) {
        // Keep the scenario readable while the directory is rewritten.
        const auto tmp = fs::temp_directory_path() / ("mvlab-scenario-" + std::to_string(::getpid()) + ".scn");
        fs::copy_file(rerun.scenario, tmp, fs::copy_options::overwrite_existing);
        rerun.scenario = tmp.string();
      }
      return execute(rerun);
    }
    if (app.get_subcommands().empty()) {
      std::cerr << "a subcommand is required\n" << app.help();
      return 1;
    }
    set.subcommand = app.get_subcommands().front()->get_name();
    if (p_opt->count()) set.particles = particles;
    if (dt_opt->count()) set.dt = dt;
    if (h_opt->count()) set.horizon = horizon;
    return execute(set);
  } catch (const ScenarioError& e) {
    std::cerr << "scenario error: " << e.what() << '\n';
    return 1;
  } catch (const BlowUpError& e) {
    std::cerr << "numerical blow-up: " << e.what() << '\n';
    return 3;
  } catch (const BasisDegeneracyError& e) {
    std::cerr << "regression breakdown: " << e.what() << '\n';
    return 3;
  } catch (const EllipticityError& e) {
    std::cerr << "ellipticity failure: " << e.what() << '\n';
    return 3;
  } catch (const InvariantBreach& e) {
    std::cerr << "invariant breach: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const std::out_of_range& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mvlab::cli
