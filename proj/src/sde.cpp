#include "mvlab/sde.hpp"

#include "mvlab/csv.hpp"
#include "mvlab/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <ostream>

namespace mvlab {

BlowUpError::BlowUpError(std::size_t step_, double time_, std::size_t particle_)
    : std::runtime_error("non-finite state at step " + std::to_string(step_) + " (t = " + format_double(time_) +
                         ", particle " + std::to_string(particle_) + ")"),
      step(step_),
      time(time_),
      particle(particle_) {}

void write_paths_csv(std::ostream& os, const PathBundle& paths) {
  CsvWriter w(os);
  std::vector<std::string> names{"step", "time", "particle"};
  const auto d = paths.states.empty() ? 0 : paths.states.front().cols();
  for (Eigen::Index j = 0; j < d; ++j) names.push_back("x" + std::to_string(j));
  w.header(names);
  for (std::size_t k = 0; k < paths.states.size(); ++k) {
    const auto& s = paths.states[k];
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      w.field(paths.steps[k]).field(paths.times[k]).field(static_cast<long long>(i)).fields(row(s, i)).end();
  }
}

DriftShift DriftShift::constant(std::vector<double> c) {
  DriftShift s;
  double norm = 0.0;
  for (double v : c) norm += v * v;
  s.bound = std::sqrt(norm);
  s.beta = [c = std::move(c)](double, State, const MeasureSummary&, std::span<double> out) {
    std::copy(c.begin(), c.end(), out.begin());
  };
  return s;
}

TimeGrid TimeGrid::make(double dt, double horizon, double t0) {
  if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
  if (!(horizon >= 0.0)) throw std::invalid_argument("horizon must be nonnegative");
  TimeGrid g;
  g.t0 = t0;
  g.steps = static_cast<std::size_t>(std::llround(horizon / dt));
  g.dt = g.steps == 0 ? dt : horizon / static_cast<double>(g.steps);
  return g;
}

EulerStepper::EulerStepper(const ProblemSpec& spec)
    : spec_(spec),
      d_(spec.dim),
      drift_(static_cast<std::size_t>(spec.dim)),
      sigma_(static_cast<std::size_t>(spec.dim * spec.dim)),
      shift_(static_cast<std::size_t>(spec.dim)) {}

void EulerStepper::step(double t, std::span<double> x, const MeasureSummary& mu, double dt,
                        std::span<const double> xi, const DriftShift* shift) {
  spec_.drift(t, x, mu, drift_);
  spec_.diffusion(x, mu, sigma_);
  const double sq = std::sqrt(dt);
  if (shift) shift->beta(t, x, mu, shift_);
  for (int i = 0; i < d_; ++i) {
    double noise = 0.0;
    for (int j = 0; j < d_; ++j) {
      const double s = sigma_[static_cast<std::size_t>(i * d_ + j)];
      noise += s * (sq * xi[static_cast<std::size_t>(j)] + (shift ? shift_[static_cast<std::size_t>(j)] * dt : 0.0));
    }
    x[static_cast<std::size_t>(i)] += drift_[static_cast<std::size_t>(i)] * dt + noise;
  }
}

void EulerStepper::step_controlled(double t, std::span<double> x, const MeasureSummary& mu, double dt,
                                   std::span<const double> xi, std::span<const double> ra) {
  spec_.drift(t, x, mu, drift_);
  spec_.diffusion(x, mu, sigma_);
  const double sq = std::sqrt(dt);
  for (int i = 0; i < d_; ++i) {
    double noise = 0.0;
    for (int j = 0; j < d_; ++j) {
      const double s = sigma_[static_cast<std::size_t>(i * d_ + j)];
      noise += s * (sq * xi[static_cast<std::size_t>(j)] + ra[static_cast<std::size_t>(j)] * dt);
    }
    x[static_cast<std::size_t>(i)] += drift_[static_cast<std::size_t>(i)] * dt + noise;
  }
}

namespace {

bool finite_row(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

StateMatrix draw_initial(const EmpiricalMeasure& theta, std::size_t n, std::uint64_t seed) {
  StateMatrix x(static_cast<Eigen::Index>(n), theta.dim());
  parallel_for(n, [&](std::size_t i) {
    const double u = uniform({seed, Stream::kInitial, i, 0});
    const auto idx = theta.sample_index(u);
    x.row(static_cast<Eigen::Index>(i)) = theta.points().row(static_cast<Eigen::Index>(idx));
  });
  return x;
}

}  // namespace

void euler_step_ensemble(const ProblemSpec& spec, StateMatrix& x, const MeasureSummary& mu, double t, double dt,
             std::uint64_t seed, Stream stream, std::uint64_t step, const DriftShift* shift) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(spec.dim);
  std::atomic<std::size_t> bad{std::numeric_limits<std::size_t>::max()};
  parallel_chunks(n, [&](std::size_t, std::size_t b, std::size_t e) {
    EulerStepper stepper(spec);
    std::vector<double> xi(d);
    for (std::size_t i = b; i < e; ++i) {
      gaussian_block({seed, stream, i, step}, xi);
      auto xr = row(x, static_cast<Eigen::Index>(i));
      stepper.step(t, xr, mu, dt, xi, shift);
      if (!finite_row(xr)) {
        auto cur = bad.load();
        while (i < cur && !bad.compare_exchange_weak(cur, i)) {
        }
        return;
      }
    }
  });
  if (bad.load() != std::numeric_limits<std::size_t>::max()) throw BlowUpError(step, t + dt, bad.load());
}

namespace {

bool wants_atoms(const std::vector<double>& atom_times, const TimeGrid& g, std::size_t k) {
  for (double t : atom_times) {
    const auto target = static_cast<std::size_t>(std::llround((t - g.t0) / g.dt));
    if (target == k) return true;
  }
  return false;
}

}  // namespace

MvRun simulate_mv(const ProblemSpec& spec, const EmpiricalMeasure& theta, double dt, double horizon,
                  std::size_t n_particles, std::uint64_t seed, const MvOptions& opts) {
  if (!(dt > 0.0) || horizon < dt - 1e-12) throw std::invalid_argument("simulate_mv: need dt > 0 and T >= dt");
  if (n_particles == 0) throw std::invalid_argument("simulate_mv: need at least one particle");
  if (theta.dim() != spec.dim) throw std::invalid_argument("simulate_mv: theta dimension differs from the model");
  const auto grid = TimeGrid::make(dt, horizon);
  const std::size_t stride = std::max<std::size_t>(1, opts.record_every);

  MvRun run;
  run.paths.seed = seed;
  run.paths.stream = opts.stream;
  StateMatrix x = draw_initial(theta, n_particles, seed);

  auto record = [&](std::size_t k, const MeasureSummary& s) {
    std::shared_ptr<const EmpiricalMeasure> atoms;
    if (opts.keep_all_atoms || wants_atoms(opts.atom_times, grid, k))
      atoms = std::make_shared<const EmpiricalMeasure>(EmpiricalMeasure::uniform(x));
    run.flow.append(grid.time(k), s, std::move(atoms));
    if (opts.keep_paths && (k % stride == 0 || k == grid.steps)) {
      run.paths.times.push_back(grid.time(k));
      run.paths.steps.push_back(k);
      run.paths.states.push_back(x);
    }
  };

  MeasureSummary s = spec.summarize(x);
  record(0, s);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    euler_step_ensemble(spec, x, s, grid.time(k), grid.dt, seed, opts.stream, k, nullptr);
    s = spec.summarize(x);
    record(k + 1, s);
  }
  if (!opts.keep_paths) {
    run.paths.times = {grid.end()};
    run.paths.steps = {grid.steps};
    run.paths.states = {x};
  }
  run.final_state = Ensemble{grid.end(), std::move(x), seed, grid.steps};
  return run;
}

PathBundle simulate_decoupled(const ProblemSpec& spec, const StateMatrix& x0, const MeasureFlow& flow,
                              const DriftShift* shift, double dt, double horizon, std::uint64_t seed,
                              const DecoupledOptions& opts) {
  if (x0.cols() != spec.dim) throw std::invalid_argument("simulate_decoupled: state dimension differs from the model");
  const auto grid = TimeGrid::make(dt, horizon, opts.t0);
  if (!flow.covers(grid.end()) || flow.nodes() == 0)
    throw CoverageError("simulate_decoupled: measure flow ends at t = " + format_double(flow.horizon()) +
                        " before the horizon " + format_double(grid.end()));
  if (!flow.is_stationary() && flow.nodes() > 1) {
    const double flow_step = flow.times()[1] - flow.times()[0];
    const double ratio = flow_step / grid.dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-6 || std::round(ratio) < 1.0)
      throw std::invalid_argument("simulate_decoupled: dt must divide the flow grid step");
  }
  PathBundle paths;
  paths.seed = seed;
  paths.stream = opts.stream;
  StateMatrix x = x0;
  const std::size_t stride = std::max<std::size_t>(1, opts.record_every);
  auto record = [&](std::size_t k) {
    paths.times.push_back(grid.time(k));
    paths.steps.push_back(k);
    paths.states.push_back(x);
  };
  record(0);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const double t = grid.time(k);
    euler_step_ensemble(spec, x, flow.summary_at(t), t, grid.dt, seed, opts.stream, k, shift);
    if (opts.keep_paths ? ((k + 1) % stride == 0 || k + 1 == grid.steps) : k + 1 == grid.steps) record(k + 1);
  }
  return paths;
}

PathBundle simulate_decoupled(const ProblemSpec& spec, std::span<const double> x0, std::size_t n_particles,
                              const MeasureFlow& flow, const DriftShift* shift, double dt, double horizon,
                              std::uint64_t seed, const DecoupledOptions& opts) {
  StateMatrix x(static_cast<Eigen::Index>(n_particles), static_cast<Eigen::Index>(x0.size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = x0[static_cast<std::size_t>(j)];
  return simulate_decoupled(spec, x, flow, shift, dt, horizon, seed, opts);
}

FlowPropertyResult flow_property_check(const ProblemSpec& spec, const EmpiricalMeasure& theta, double s,
                                       double horizon, double dt, std::size_t n_particles, std::uint64_t seed) {
  if (!(s > 0.0) || s > horizon + 1e-12) throw std::invalid_argument("flow_property_check: need 0 < s <= T");
  MvOptions opts;
  opts.keep_paths = false;
  opts.atom_times = {s, horizon};
  const auto run = simulate_mv(spec, theta, dt, horizon, n_particles, seed, opts);
  const auto& straight = run.flow.atoms(run.flow.nodes() - 1);
  const auto& at_s = run.flow.atoms_at(s);

  DecoupledOptions dopts;
  dopts.t0 = run.flow.times()[run.flow.node_at(s)];
  dopts.stream = Stream::kRestart;
  dopts.keep_paths = false;
  const double remaining = horizon - dopts.t0;
  FlowPropertyResult r;
  r.mc_scale = two_sample_w2_scale(straight);
  if (remaining < 0.5 * dt) {
    r.discrepancy = wasserstein(at_s, straight, 2.0);
    return r;
  }
  const auto restarted = simulate_decoupled(spec, at_s.points(), run.flow, nullptr, dt, remaining, seed, dopts);
  r.discrepancy = wasserstein(EmpiricalMeasure::uniform(restarted.terminal()), straight, 2.0);
  return r;
}

std::pair<double, double> linear_fit(std::span<const double> t, std::span<const double> y) {
  const auto n = static_cast<double>(t.size());
  if (t.size() < 2) return {y.empty() ? 0.0 : y[0], 0.0};
  double st = 0, sy = 0, stt = 0, sty = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    st += t[i];
    sy += y[i];
    stt += t[i] * t[i];
    sty += t[i] * y[i];
  }
  const double denom = n * stt - st * st;
  const double slope = denom == 0.0 ? 0.0 : (n * sty - st * sy) / denom;
  return {(sy - slope * st) / n, slope};
}

ContractionResult contraction_rate(const ProblemSpec& spec, const EmpiricalMeasure& theta,
                                   const EmpiricalMeasure& theta_prime, double dt, double horizon,
                                   std::size_t n_particles, std::uint64_t seed, double p,
                                   std::size_t record_every) {
  const auto grid = TimeGrid::make(dt, horizon);
  StateMatrix x = draw_initial(theta, n_particles, seed);
  StateMatrix y = draw_initial(theta_prime, n_particles, seed);
  ContractionResult res;
  const std::size_t stride = std::max<std::size_t>(1, record_every);
  auto record = [&](std::size_t k) {
    res.times.push_back(grid.time(k));
    res.distances.push_back(wasserstein(EmpiricalMeasure::uniform(x), EmpiricalMeasure::uniform(y), p));
  };
  record(0);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const auto sx = spec.summarize(x);
    const auto sy = spec.summarize(y);
    euler_step_ensemble(spec, x, sx, grid.time(k), grid.dt, seed, Stream::kBrownian, k, nullptr);
    euler_step_ensemble(spec, y, sy, grid.time(k), grid.dt, seed, Stream::kBrownian, k, nullptr);
    if ((k + 1) % stride == 0 || k + 1 == grid.steps) record(k + 1);
  }
  std::vector<double> ft, fy;
  for (std::size_t i = 0; i < res.times.size(); ++i) {
    if (res.distances[i] < 1e-8) {
      if (i + 1 < res.times.size() || ft.empty()) {
        res.truncated = true;
        res.note = "W_p fell below 1e-8 at t = " + format_double(res.times[i]) + "; fit truncated there";
      }
      break;
    }
    ft.push_back(res.times[i]);
    fy.push_back(std::log(res.distances[i]));
  }
  res.fitted_points = ft.size();
  if (ft.size() >= 2) {
    const auto [a, b] = linear_fit(ft, fy);
    res.intercept = a;
    res.rate = -b;
  } else {
    res.rate = std::numeric_limits<double>::quiet_NaN();
    if (res.note.empty()) res.note = "too few points above 1e-8 to fit a rate";
  }
  return res;
}

}  // namespace mvlab
