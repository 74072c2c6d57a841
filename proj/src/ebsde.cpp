#include "mvlab/ebsde.hpp"

#include "mvlab/csv.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace mvlab {

double truncation_horizon(double alpha, double growth_constant, double tol_trunc) {
  const double t = std::log(growth_constant / (alpha * tol_trunc)) / alpha;
  return std::max(t, 1.0 / alpha);
}

namespace {

double stationary_sd(const MeasureFlow& flow) {
  const auto& s = flow.summary(0);
  double m2 = 0.0;
  for (double m : s.mean) m2 += m * m;
  const double var = (s.second_moment - m2) / static_cast<double>(std::max<std::size_t>(1, s.mean.size()));
  return var > 1e-12 ? std::sqrt(var) : 1.0;
}

}  // namespace

AlphaSolution solve_alpha_bsde(const ProblemSpec& spec, const MeasureFlow& flow, double alpha, double dt,
                               std::size_t n_particles, std::uint64_t seed, const AlphaOptions& opts) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  AlphaSolution out;
  out.alpha = alpha;
  out.growth_constant = opts.growth_constant >= 0.0 ? opts.growth_constant : driver_growth_constant(spec, 1000, seed);
  const double c = std::max(out.growth_constant, 1e-12);
  out.horizon = truncation_horizon(alpha, c, opts.tol_trunc);
  if (out.horizon / dt > 1e7)
    throw BudgetError("alpha-BSDE needs " + format_double(out.horizon / dt) +
                      " time steps (limit 1e7); use a larger alpha or dt");
  if (!flow.covers(out.horizon)) throw CoverageError("alpha-BSDE: flow does not cover T_alpha");
  out.truncation_bound = c / alpha * std::exp(-alpha * out.horizon);
  out.anchor = opts.anchor.empty() ? std::vector<double>(static_cast<std::size_t>(spec.dim), 0.0) : opts.anchor;

  auto zero_terminal = spec;
  zero_terminal.terminal = [](State, const MeasureSummary&) { return 0.0; };
  BsdeOptions bo;
  bo.degree = opts.degree;
  bo.alpha = alpha;
  bo.keep_functions = false;
  bo.spread = opts.spread >= 0.0 ? opts.spread : (flow.is_stationary() ? stationary_sd(flow) : -1.0);
  out.solution = solve_finite_bsde(zero_terminal, flow, out.anchor, out.horizon, dt, n_particles, seed, bo);
  out.u_at_anchor = out.solution.y0;
  out.u_stderr = out.solution.y0_stderr;
  out.lambda_candidate = alpha * out.u_at_anchor;
  out.u_alpha = RegressionFunction(out.solution.u.basis(), 1, {0.0});
  out.u_alpha.node(0) = out.solution.u.node(0);
  return out;
}

std::vector<double> extrapolation_weights(std::span<const double> alphas) {
  const std::size_t n = alphas.size();
  if (n == 0) throw std::invalid_argument("no lambda candidates");
  if (n == 1) return {1.0};
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return alphas[a] < alphas[b]; });
  std::vector<double> w(n, 1.0);
  w[order[0]] = 2.0;
  if (n > 2) w[order[1]] = 2.0;
  double sw = 0, sx = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += w[i];
    sx += w[i] * alphas[i];
    sxx += w[i] * alphas[i] * alphas[i];
  }
  const double denom = sw * sxx - sx * sx;
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) {
    // intercept = (sy sxx - sx sxy) / denom
    c[i] = denom == 0.0 ? w[i] / sw : w[i] * (sxx - sx * alphas[i]) / denom;
  }
  return c;
}

double extrapolate_lambda(std::span<const double> alphas, std::span<const double> candidates) {
  const auto c = extrapolation_weights(alphas);
  double v = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) v += c[i] * candidates[i];
  return v;
}

std::vector<double> ErgodicSolution::zeta_at(State x) const {
  std::vector<double> z(static_cast<std::size_t>(zeta_bar.outputs()));
  zeta_bar.eval(0, x, z);
  return z;
}

MeasureFlow ErgodicSolution::stationary_flow() const {
  return MeasureFlow::stationary(std::make_shared<const EmpiricalMeasure>(mu_star), mu_star_summary);
}

ErgodicSolution extract_ergodic(const ProblemSpec& spec, const ErgodicOptions& opts, std::uint64_t seed) {
  const auto& alphas = opts.alphas;
  if (alphas.empty()) throw std::invalid_argument("empty alpha sequence");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] > 0.0 && alphas[i] <= 1.0)) throw std::invalid_argument("alphas must lie in (0, 1]");
    if (i > 0 && !(alphas[i] < alphas[i - 1])) throw std::invalid_argument("alpha sequence must be strictly decreasing");
  }
  ErgodicSolution sol;
  const double rate = spec.nominal_rate();
  const double t_burn = opts.t_burn > 0.0 ? opts.t_burn : 20.0 / rate;
  sol.invariant = invariant_measure(spec, opts.n_mu_star, opts.dt, t_burn, seed);
  sol.mu_star = sol.invariant.mu_star;
  sol.mu_star_summary = sol.invariant.summary;
  if (sol.invariant.nonstationary) sol.warning = sol.invariant.warning;
  const auto flow = sol.stationary_flow();

  AlphaOptions ao;
  ao.degree = opts.degree;
  ao.growth_constant = driver_growth_constant(spec, 1000, seed);
  std::vector<double> second = opts.second_anchor;
  if (second.empty()) {
    second.assign(static_cast<std::size_t>(spec.dim), 0.0);
    second[0] = 1.0;
  }
  std::vector<double> cand, cand2;
  AlphaSolution last;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    auto a = solve_alpha_bsde(spec, flow, alphas[i], opts.dt, opts.n_particles, seed + 1000 * (i + 1), ao);
    AlphaTrace tr;
    tr.alpha = a.alpha;
    tr.horizon = a.horizon;
    tr.u_anchor = a.u_at_anchor;
    tr.lambda_candidate = a.lambda_candidate;
    tr.stderr_ = a.alpha * a.u_stderr;
    tr.lambda_second_anchor = a.alpha * a.solution.y0_at(second);
    sol.trace.push_back(tr);
    cand.push_back(tr.lambda_candidate);
    cand2.push_back(tr.lambda_second_anchor);
    if (i + 1 == alphas.size()) last = std::move(a);
  }
  sol.lambda = extrapolate_lambda(alphas, cand);
  sol.lambda_second_anchor = extrapolate_lambda(alphas, cand2);
  {
    const auto c = extrapolation_weights(alphas);
    double v = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) v += c[i] * c[i] * sol.trace[i].stderr_ * sol.trace[i].stderr_;
    sol.lambda_stderr = std::sqrt(v);
  }

  // Successive candidates should move in one direction; reversals beyond noise are flagged.
  for (std::size_t i = 2; i < sol.trace.size(); ++i) {
    const double d1 = cand[i - 1] - cand[i - 2];
    const double d2 = cand[i] - cand[i - 1];
    const double noise = 2.0 * std::hypot(sol.trace[i].stderr_, sol.trace[i - 1].stderr_);
    if (d1 * d2 < 0.0 && std::abs(d2) > noise) {
      sol.unstable = true;
      sol.warning += (sol.warning.empty() ? "" : "; ") + std::string("lambda candidates are not monotone in alpha");
      break;
    }
  }

  sol.u_bar = last.u_alpha;
  std::vector<double> origin(static_cast<std::size_t>(spec.dim), 0.0);
  sol.u_bar.recenter(0, origin);
  sol.u_bar.shift(0, 0, -sol.u_bar.value(0, origin));
  sol.zeta_bar = RegressionFunction(last.solution.z.basis(), spec.dim, {0.0});
  sol.zeta_bar.node(0) = last.solution.z.node(0);

  const auto& pts = sol.mu_star.points();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const auto x = row(pts, i);
    const auto z = sol.zeta_at(x);
    acc += spec.driver(x, sol.mu_star_summary, z);
  }
  sol.self_consistency = acc / static_cast<double>(pts.rows());
  return sol;
}

double lambda_by_time_average(const ProblemSpec& spec, const RegressionFunction* zeta, double t_long, double dt,
                              std::size_t n_particles, std::uint64_t seed) {
  const double rate = spec.nominal_rate();
  if (!(rate > 0.0)) throw std::invalid_argument("time average needs a positive contraction rate");
  if (t_long < 30.0 / rate - 1e-12)
    throw std::invalid_argument("time average needs T >= 30 / rate = " + format_double(30.0 / rate));
  const auto burn = TimeGrid::make(dt, 10.0 / rate);
  const auto grid = TimeGrid::make(dt, t_long, burn.end());
  std::vector<double> origin(static_cast<std::size_t>(spec.dim), 0.0);
  MvOptions mo;
  mo.keep_paths = false;
  auto run = simulate_mv(spec, EmpiricalMeasure::dirac(origin), dt, burn.end(), n_particles, seed, mo);
  StateMatrix x = std::move(run.final_state.states);
  const auto du = static_cast<std::size_t>(spec.dim);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.rows());
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const auto mu = spec.summarize(x);
    parallel_chunks(n_particles, [&](std::size_t, std::size_t b, std::size_t e) {
      std::vector<double> z(du, 0.0);
      for (std::size_t i = b; i < e; ++i) {
        const auto xi = row(x, static_cast<Eigen::Index>(i));
        if (zeta) zeta->eval(0, xi, z);
        acc(static_cast<Eigen::Index>(i)) += grid.dt * spec.driver(xi, mu, z);
      }
    });
    euler_step_ensemble(spec, x, mu, grid.time(k), grid.dt, seed, Stream::kBrownian, burn.steps + k);
  }
  return acc.mean() / (static_cast<double>(grid.steps) * grid.dt);
}

void write_alpha_trace_csv(std::ostream& os, const ErgodicSolution& sol) {
  CsvWriter w(os);
  w.header({"alpha", "horizon", "u_anchor", "lambda_candidate", "stderr", "lambda_second_anchor"});
  for (const auto& t : sol.trace)
    w.field(t.alpha).field(t.horizon).field(t.u_anchor).field(t.lambda_candidate).field(t.stderr_).field(t.lambda_second_anchor).end();
}

void write_ergodic_report(std::ostream& os, const ErgodicSolution& sol) {
  std::vector<double> origin(static_cast<std::size_t>(sol.u_bar.basis().dim()), 0.0);
  os << "lambda=" << format_double(sol.lambda) << '\n';
  os << "lambda_stderr=" << format_double(sol.lambda_stderr) << '\n';
  os << "lambda_second_anchor=" << format_double(sol.lambda_second_anchor) << '\n';
  os << "self_consistency=" << format_double(sol.self_consistency) << '\n';
  os << "u_bar_at_origin=" << format_double(sol.u_bar_at(origin)) << '\n';
  os << "mu_star_second_moment=" << format_double(sol.mu_star_summary.second_moment) << '\n';
  os << "stationarity_w2=" << format_double(sol.invariant.stationarity_w2) << '\n';
  os << "unstable=" << (sol.unstable ? 1 : 0) << '\n';
  if (!sol.warning.empty()) os << "warning=" << sol.warning << '\n';
}

}  // namespace mvlab
