#include "mvlab/control.hpp"

#include "mvlab/csv.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/rng.hpp"
#include "mvlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>

namespace mvlab {

namespace {

constexpr double kGolden = 0.6180339887498949;
constexpr double kInnerTol = 1e-10;
constexpr std::size_t kGridPoints = 10000;

const ControlSet& control_of(const ProblemSpec& spec) {
  if (!spec.control) throw ConfigError("spec '" + spec.name + "' declares no control set");
  return *spec.control;
}

// Minimizes f on [lo, hi]; endpoints are compared explicitly.
template <class F>
std::pair<double, double> golden_section(F&& f, double lo, double hi) {
  double a = lo, b = hi;
  double c = b - kGolden * (b - a), d = a + kGolden * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > kInnerTol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kGolden * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kGolden * (b - a);
      fd = f(d);
    }
  }
  std::pair<double, double> best{0.5 * (a + b), f(0.5 * (a + b))};
  for (double e : {lo, hi}) {
    const double fe = f(e);
    if (fe < best.second) best = {e, fe};
  }
  return best;
}

// Three restarts over thirds of the interval.
template <class F>
double coordinate_min(F&& f, double lo, double hi) {
  if (hi <= lo) return lo;
  const double w = (hi - lo) / 3.0;
  std::pair<double, double> best{lo, f(lo)};
  for (int r = 0; r < 3; ++r) {
    const auto p = golden_section(f, lo + r * w, r == 2 ? hi : lo + (r + 1) * w);
    if (p.second < best.second) best = p;
  }
  return best.first;
}

double hamiltonian_into(const ProblemSpec& spec, State x, const MeasureSummary& mu, std::span<const double> z,
                        std::span<double> a) {
  const auto& cs = control_of(spec);
  const int k = cs.dim();
  const int d = spec.dim;
  double w_buf[16];
  std::vector<double> w_heap;
  std::span<double> w;
  if (k <= 16) {
    w = std::span<double>(w_buf, static_cast<std::size_t>(k));
  } else {
    w_heap.resize(static_cast<std::size_t>(k));
    w = w_heap;
  }
  for (int j = 0; j < k; ++j) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += z[static_cast<std::size_t>(i)] * cs.r(i, j);
    w[static_cast<std::size_t>(j)] = s;
  }
  auto linear = [&](std::span<const double> act) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += w[static_cast<std::size_t>(j)] * act[static_cast<std::size_t>(j)];
    return s;
  };

  if (cs.quadratic && cs.separable) {
    double value = 0.0;
    for (int j = 0; j < k; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      a[jj] = std::clamp(-0.5 * w[jj], cs.lo[jj], cs.hi[jj]);
      value += a[jj] * a[jj] + w[jj] * a[jj];
    }
    if (cs.state_cost) return cs.state_cost(x, mu) + value;
    if (!spec.running_cost) throw ConfigError("quadratic control set needs a state cost or running cost");
    std::vector<double> zero(static_cast<std::size_t>(k), 0.0);
    return spec.running_cost(x, mu, zero) + value;
  }

  if (!spec.running_cost) throw ConfigError("spec '" + spec.name + "' has a control set but no running cost");
  auto objective = [&](std::span<const double> act) { return spec.running_cost(x, mu, act) + linear(act); };

  if (cs.separable) {
    for (int j = 0; j < k; ++j) a[static_cast<std::size_t>(j)] = 0.5 * (cs.lo[j] + cs.hi[j]);
    for (int j = 0; j < k; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      auto f = [&](double v) {
        a[jj] = v;
        return objective(a);
      };
      a[jj] = coordinate_min(f, cs.lo[jj], cs.hi[jj]);
    }
    return objective(a);
  }

  // Non-separable: grid search over the box, then coordinate polish inside the best cell.
  const auto per_dim = static_cast<std::size_t>(
      std::ceil(std::pow(static_cast<double>(kGridPoints), 1.0 / static_cast<double>(k)) - 1e-9));
  const std::size_t m = std::max<std::size_t>(per_dim, 2);
  std::vector<double> trial(static_cast<std::size_t>(k)), best(static_cast<std::size_t>(k));
  std::vector<std::size_t> idx(static_cast<std::size_t>(k), 0);
  double best_val = std::numeric_limits<double>::infinity();
  for (;;) {
    for (int j = 0; j < k; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      trial[jj] = cs.lo[jj] + (cs.hi[jj] - cs.lo[jj]) * static_cast<double>(idx[jj]) / static_cast<double>(m - 1);
    }
    const double v = objective(trial);
    if (v < best_val) {
      best_val = v;
      best = trial;
    }
    std::size_t j = 0;
    while (j < idx.size() && ++idx[j] == m) idx[j++] = 0;
    if (j == idx.size()) break;
  }
  std::copy(best.begin(), best.end(), a.begin());
  for (int sweep = 0; sweep < 4; ++sweep)
    for (int j = 0; j < k; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      const double h = (cs.hi[jj] - cs.lo[jj]) / static_cast<double>(m - 1);
      auto f = [&](double v) {
        a[jj] = v;
        return objective(a);
      };
      a[jj] = coordinate_min(f, std::max(cs.lo[jj], a[jj] - h), std::min(cs.hi[jj], a[jj] + h));
    }
  return objective(a);
}

MonteCarloValue mean_and_error(const Eigen::VectorXd& v) {
  MonteCarloValue out;
  const auto n = static_cast<double>(v.size());
  out.mean = v.mean();
  out.stderr_ = v.size() > 1 ? std::sqrt((v.array() - out.mean).square().sum() / (n - 1.0) / n) : 0.0;
  return out;
}

CostReport to_report(const MonteCarloValue& mc, double benchmark, double benchmark_stderr) {
  CostReport r;
  r.estimate = mc.mean;
  r.stderr_ = mc.stderr_;
  r.benchmark = benchmark;
  r.benchmark_stderr = benchmark_stderr;
  r.gap = mc.mean - benchmark;
  return r;
}

void check_finite(std::span<const double> x, std::size_t step, double t, std::size_t particle) {
  for (double v : x)
    if (!std::isfinite(v)) throw BlowUpError(step, t, particle);
}

// Shared driver loop for the three cost estimators.
enum class CostMode { kDirect, kGirsanov, kTail };

Eigen::VectorXd simulate_costs(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x0,
                               const MeasureFlow& flow, double horizon, double dt, std::size_t n,
                               std::uint64_t seed, CostMode mode) {
  const auto& cs = control_of(spec);
  if (!spec.running_cost) throw ConfigError("spec '" + spec.name + "' has no running cost");
  if (static_cast<int>(x0.size()) != spec.dim) throw std::invalid_argument("x0 has the wrong dimension");
  if (!flow.covers(horizon)) throw CoverageError("cost evaluation: flow does not cover the horizon");
  const auto grid = TimeGrid::make(dt, horizon);
  const auto d = static_cast<std::size_t>(spec.dim);
  const auto k = static_cast<std::size_t>(cs.dim());
  const std::size_t tail_start = grid.steps / 2;
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  parallel_chunks(n, [&](std::size_t, std::size_t b, std::size_t e) {
    EulerStepper st(spec);
    std::vector<double> x(d), xi(d), z(d), a(k), ra(d);
    for (std::size_t i = b; i < e; ++i) {
      std::copy(x0.begin(), x0.end(), x.begin());
      double cost = 0.0, log_rho = 0.0;
      for (std::size_t s = 0; s < grid.steps; ++s) {
        const double t = grid.time(s);
        const auto& mu = flow.summary_at(t);
        policy.act(spec, t, x, mu, z, a);
        if (mode != CostMode::kTail || s >= tail_start) cost += grid.dt * spec.running_cost(x, mu, a);
        for (std::size_t r = 0; r < d; ++r) {
          double v = 0.0;
          for (std::size_t j = 0; j < k; ++j) v += cs.r(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) * a[j];
          ra[r] = v;
        }
        gaussian_block({seed, Stream::kControl, i, s}, xi);
        if (mode == CostMode::kGirsanov) {
          const double sq = std::sqrt(grid.dt);
          for (std::size_t r = 0; r < d; ++r) log_rho += ra[r] * sq * xi[r] - 0.5 * ra[r] * ra[r] * grid.dt;
          st.step(t, x, mu, grid.dt, xi);
        } else {
          st.step_controlled(t, x, mu, grid.dt, xi, ra);
        }
        check_finite(x, s, t, i);
      }
      if (mode == CostMode::kTail) {
        cost /= static_cast<double>(grid.steps - tail_start) * grid.dt;
      } else {
        cost += spec.terminal(x, flow.summary_at(grid.end()));
        if (mode == CostMode::kGirsanov) cost *= std::exp(log_rho);
      }
      out(static_cast<Eigen::Index>(i)) = cost;
    }
  });
  return out;
}

}  // namespace

HamiltonianValue hamiltonian(const ProblemSpec& spec, State x, const MeasureSummary& mu, std::span<const double> z) {
  HamiltonianValue out;
  out.a.resize(static_cast<std::size_t>(control_of(spec).dim()));
  out.value = hamiltonian_into(spec, x, mu, z, out.a);
  return out;
}

DriverFn hamiltonian_driver(const ProblemSpec& spec) {
  control_of(spec);
  auto s = std::make_shared<ProblemSpec>(spec);
  s->driver = nullptr;
  return [s](State x, const MeasureSummary& mu, std::span<const double> z) {
    thread_local std::vector<double> a;
    a.resize(static_cast<std::size_t>(s->control->dim()));
    return hamiltonian_into(*s, x, mu, z, a);
  };
}

const char* to_string(ZSource s) {
  switch (s) {
    case ZSource::kFinite: return "finite";
    case ZSource::kErgodic: return "ergodic";
    case ZSource::kConstant: return "constant";
    case ZSource::kZero: return "zero";
  }
  return "?";
}

ControlPolicy ControlPolicy::finite_horizon(const BsdeSolution& sol) {
  const bool thin = sol.steps > 1 && (sol.z.nodes() < 2 || sol.z.node(1).coef.size() == 0);
  if (thin)
    throw std::invalid_argument("finite-horizon feedback needs Z regressions at every node (keep_functions)");
  ControlPolicy p;
  p.source_ = ZSource::kFinite;
  p.z_fn_ = &sol.z;
  p.node_by_time_ = true;
  return p;
}

ControlPolicy ControlPolicy::ergodic(const RegressionFunction& zeta_bar) {
  ControlPolicy p;
  p.source_ = ZSource::kErgodic;
  p.z_fn_ = &zeta_bar;
  return p;
}

ControlPolicy ControlPolicy::constant_z(std::vector<double> z) {
  ControlPolicy p;
  p.source_ = ZSource::kConstant;
  p.z_const_ = std::move(z);
  return p;
}

ControlPolicy ControlPolicy::zero_z() { return ControlPolicy{}; }

ControlPolicy ControlPolicy::constant_action(std::vector<double> a) {
  ControlPolicy p;
  p.source_ = ZSource::kConstant;
  p.action_ = std::move(a);
  return p;
}

std::string ControlPolicy::describe() const {
  if (action_) {
    std::string s = "constant-action(";
    for (std::size_t i = 0; i < action_->size(); ++i) s += (i ? "," : "") + format_double((*action_)[i]);
    return s + ")";
  }
  return std::string("feedback z=") + to_string(source_);
}

void ControlPolicy::act(const ProblemSpec& spec, double t, State x, const MeasureSummary& mu,
                        std::span<double> z_scratch, std::span<double> a) const {
  const auto& cs = control_of(spec);
  if (action_) {
    std::copy(action_->begin(), action_->end(), a.begin());
  } else {
    switch (source_) {
      case ZSource::kFinite:
      case ZSource::kErgodic:
        z_fn_->eval(node_by_time_ ? z_fn_->node_at(t) : 0, x, z_scratch);
        break;
      case ZSource::kConstant:
        std::copy(z_const_.begin(), z_const_.end(), z_scratch.begin());
        break;
      case ZSource::kZero:
        std::fill(z_scratch.begin(), z_scratch.end(), 0.0);
        break;
    }
    hamiltonian_into(spec, x, mu, z_scratch, a);
  }
  if (!cs.contains(a, 1e-12)) throw InvariantBreach("policy " + describe() + " left the control set");
}

CostReport evaluate_cost_finite(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x0,
                                const MeasureFlow& flow, double horizon, double dt, std::size_t n_particles,
                                std::uint64_t seed, double benchmark, double benchmark_stderr) {
  const auto v = simulate_costs(spec, policy, x0, flow, horizon, dt, n_particles, seed, CostMode::kDirect);
  return to_report(mean_and_error(v), benchmark, benchmark_stderr);
}

CostReport evaluate_cost_girsanov(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x0,
                                  const MeasureFlow& flow, double horizon, double dt, std::size_t n_particles,
                                  std::uint64_t seed, double benchmark, double benchmark_stderr) {
  const auto v = simulate_costs(spec, policy, x0, flow, horizon, dt, n_particles, seed, CostMode::kGirsanov);
  return to_report(mean_and_error(v), benchmark, benchmark_stderr);
}

CostReport evaluate_cost_ergodic(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x0,
                                 const MeasureFlow& flow, double t_long, double dt, std::size_t n_particles,
                                 std::uint64_t seed, double lambda, double lambda_stderr) {
  const auto v = simulate_costs(spec, policy, x0, flow, t_long, dt, n_particles, seed, CostMode::kTail);
  return to_report(mean_and_error(v), lambda, lambda_stderr);
}

OcpLongtime ocp_longtime(const ProblemSpec& spec, std::span<const double> x0, const MeasureFlow& flow,
                         std::span<const double> horizons, const ErgodicSolution& ergodic, double ell,
                         const LtbOptions& opts) {
  OcpLongtime out;
  const auto& mu0 = flow.summary(0);
  const auto k = static_cast<std::size_t>(control_of(spec).dim());
  const double u_bar = ergodic.u_bar_at(x0);
  const auto z_bar = corrector_z(spec, ergodic, mu0, x0);
  std::vector<double> a_bar(k);
  hamiltonian_into(spec, x0, mu0, z_bar, a_bar);

  std::vector<double> res, noise, a_gaps;
  for (double t : horizons) {
    BsdeOptions bo;
    bo.degree = opts.degree;
    bo.picard = opts.picard;
    const auto sol = solve_finite_bsde(spec, flow, x0, t, opts.dt, opts.n_particles, opts.seed, bo);
    const auto policy = ControlPolicy::finite_horizon(sol);
    auto cost = evaluate_cost_finite(spec, policy, x0, flow, t, opts.dt, opts.n_particles, opts.seed, sol.y0,
                                     sol.y0_stderr);
    res.push_back(std::abs(cost.estimate - ergodic.lambda * t - u_bar - ell));
    noise.push_back(std::hypot(cost.stderr_, t * ergodic.lambda_stderr));
    out.costs.push_back(cost);

    FeedbackGap row;
    row.horizon = t;
    row.z_t = z_from_gradient(sol, spec, flow, 0.0, x0).z;
    row.z_bar = z_bar;
    row.a_t.resize(k);
    hamiltonian_into(spec, x0, mu0, row.z_t, row.a_t);
    row.a_bar = a_bar;
    double ag = 0.0, zg = 0.0;
    for (std::size_t j = 0; j < k; ++j) ag += (row.a_t[j] - a_bar[j]) * (row.a_t[j] - a_bar[j]);
    for (std::size_t j = 0; j < z_bar.size(); ++j) zg += (row.z_t[j] - z_bar[j]) * (row.z_t[j] - z_bar[j]);
    row.a_gap = std::sqrt(ag);
    row.z_gap = std::sqrt(zg);
    row.lipschitz_ok = row.a_gap <= 0.5 * row.z_gap + 1e-12;
    a_gaps.push_back(row.a_gap);
    out.feedback.push_back(std::move(row));
  }
  std::vector<bool> trusted(res.size());
  std::size_t n_trusted = 0;
  for (std::size_t i = 0; i < res.size(); ++i) n_trusted += (trusted[i] = res[i] > 2.0 * noise[i]) ? 1 : 0;
  out.cost_fit = fit_exponential(horizons, res, trusted);
  out.cost_fit.noise = noise;
  out.cost_fit.ell = ell;
  if (2 * n_trusted < res.size()) {
    out.cost_fit.rate_indeterminate = true;
    if (out.cost_fit.note.empty()) out.cost_fit.note = "residuals below the Monte Carlo noise over more than half the grid";
  }
  std::vector<bool> positive(a_gaps.size());
  for (std::size_t i = 0; i < a_gaps.size(); ++i) positive[i] = a_gaps[i] > 0.0;
  out.feedback_fit = fit_exponential(horizons, a_gaps, positive);
  return out;
}

void write_cost_csv(std::ostream& os, const std::vector<std::string>& labels, const std::vector<CostReport>& costs) {
  CsvWriter w(os);
  w.header({"label", "estimate", "stderr", "benchmark", "benchmark_stderr", "gap"});
  for (std::size_t i = 0; i < costs.size(); ++i) {
    const auto& c = costs[i];
    w.field(i < labels.size() ? labels[i] : std::to_string(i));
    w.field(c.estimate).field(c.stderr_).field(c.benchmark).field(c.benchmark_stderr).field(c.gap).end();
  }
}

void write_feedback_csv(std::ostream& os, const std::vector<FeedbackGap>& rows) {
  CsvWriter w(os);
  w.header({"T", "z_t", "z_bar", "a_t", "a_bar", "a_gap", "z_gap", "lipschitz_ok"});
  for (const auto& r : rows)
    w.field(r.horizon).field(r.z_t[0]).field(r.z_bar[0]).field(r.a_t[0]).field(r.a_bar[0]).field(r.a_gap).field(r.z_gap)
        .field(static_cast<int>(r.lipschitz_ok)).end();
}

}  // namespace mvlab
