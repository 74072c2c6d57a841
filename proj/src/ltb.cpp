#include "mvlab/ltb.hpp"

#include "mvlab/csv.hpp"
#include "mvlab/sde.hpp"

#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace mvlab {

const char* to_string(DecayModel m) { return m == DecayModel::kInverse ? "inverse" : "exponential"; }

bool DecayFit::strictly_decreasing() const {
  for (std::size_t i = 1; i < residual.size(); ++i)
    if (!(residual[i] < residual[i - 1])) return false;
  return !residual.empty();
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kZ95 = 1.96;

double r_squared(std::span<const double> y, std::span<const double> yhat) {
  if (y.empty()) return 0.0;
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ssr = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ssr += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    sst += (y[i] - mean) * (y[i] - mean);
  }
  return sst > 0.0 ? 1.0 - ssr / sst : (ssr == 0.0 ? 1.0 : 0.0);
}

void check_grid(std::span<const double> h) {
  if (h.empty()) throw std::invalid_argument("empty horizon grid");
  for (std::size_t i = 1; i < h.size(); ++i)
    if (!(h[i] > h[i - 1])) throw std::invalid_argument("horizon grid must be strictly increasing");
}

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

BsdeSolution solve_at(const ProblemSpec& spec, const MeasureFlow& flow, std::span<const double> x0, double horizon,
                      std::uint64_t seed, const LtbOptions& opts) {
  BsdeOptions bo;
  bo.degree = opts.degree;
  bo.picard = opts.picard;
  bo.keep_functions = false;
  return solve_finite_bsde(spec, flow, x0, horizon, opts.dt, opts.n_particles, seed, bo);
}

double norm_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

struct ExpFunctor {
  using Scalar = double;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;

  std::vector<double> t, y;
  int inputs() const { return 3; }
  int values() const { return static_cast<int>(t.size()); }
  // p = (ell, C, rate)
  int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
    for (std::size_t i = 0; i < t.size(); ++i)
      r(static_cast<Eigen::Index>(i)) = p(0) + p(1) * std::exp(-p(2) * t[i]) - y[i];
    return 0;
  }
};

}  // namespace

DecayFit fit_inverse(std::span<const double> horizons, std::span<const double> residual) {
  check_grid(horizons);
  DecayFit fit;
  fit.model = DecayModel::kInverse;
  fit.horizons.assign(horizons.begin(), horizons.end());
  fit.residual.assign(residual.begin(), residual.end());
  fit.observed = fit.residual;
  fit.trusted.assign(horizons.size(), true);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    num += residual[i] / horizons[i];
    den += 1.0 / (horizons[i] * horizons[i]);
  }
  fit.c = num / den;
  double ssr = 0.0;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    fit.fitted.push_back(fit.c / horizons[i]);
    ssr += (residual[i] - fit.fitted.back()) * (residual[i] - fit.fitted.back());
  }
  fit.c_ci = horizons.size() > 1 ? kZ95 * std::sqrt(ssr / static_cast<double>(horizons.size() - 1) / den) : kInf;
  fit.r2 = r_squared(residual, fit.fitted);
  return fit;
}

DecayFit fit_exponential(std::span<const double> horizons, std::span<const double> residual,
                         const std::vector<bool>& trusted) {
  check_grid(horizons);
  DecayFit fit;
  fit.model = DecayModel::kExponential;
  fit.horizons.assign(horizons.begin(), horizons.end());
  fit.residual.assign(residual.begin(), residual.end());
  fit.observed = fit.residual;
  fit.trusted = trusted;
  std::vector<double> t, y;
  for (std::size_t i = 0; i < horizons.size(); ++i)
    if (trusted[i] && residual[i] > 0.0) {
      t.push_back(horizons[i]);
      y.push_back(std::log(residual[i]));
    }
  if (t.size() < 2) {
    fit.rate_indeterminate = true;
    fit.rate_ci = fit.c_ci = kInf;
    fit.note = "fewer than two residuals above the noise floor";
    fit.fitted.assign(horizons.size(), 0.0);
    return fit;
  }
  const auto [a, b] = linear_fit(t, y);
  fit.rate = -b;
  fit.c = std::exp(a);
  std::vector<double> yhat(t.size());
  double ssr = 0.0, tm = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size()), stt = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    yhat[i] = a + b * t[i];
    ssr += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    stt += (t[i] - tm) * (t[i] - tm);
  }
  if (t.size() > 2) {
    const double s2 = ssr / static_cast<double>(t.size() - 2);
    fit.rate_ci = kZ95 * std::sqrt(s2 / stt);
    fit.c_ci = fit.c * kZ95 * std::sqrt(s2 * (1.0 / static_cast<double>(t.size()) + tm * tm / stt));
  } else {
    fit.rate_ci = fit.c_ci = kInf;
  }
  fit.r2 = r_squared(y, yhat);
  for (double h : horizons) fit.fitted.push_back(fit.c * std::exp(-fit.rate * h));
  return fit;
}

void refit_with_ell(DecayFit& fit, std::span<const double> observed) {
  if (observed.size() < 4) {
    fit.note += (fit.note.empty() ? "" : "; ") + std::string("too few horizons for a free-ell refit");
    return;
  }
  ExpFunctor f;
  f.t = fit.horizons;
  f.y.assign(observed.begin(), observed.end());
  Eigen::NumericalDiff<ExpFunctor> nd(f);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<ExpFunctor>> lm(nd);
  Eigen::VectorXd p(3);
  const double sign = observed.front() >= fit.ell ? 1.0 : -1.0;
  p << fit.ell, sign * std::max(fit.c, 1e-6), std::max(fit.rate, 0.1);
  lm.parameters.xtol = 1e-12;
  lm.parameters.ftol = 1e-12;
  lm.parameters.maxfev = 2000;
  lm.minimize(p);

  Eigen::VectorXd r(f.values());
  f(p, r);
  Eigen::MatrixXd jac(f.values(), 3);
  nd.df(p, jac);
  const auto dof = f.values() - 3;
  fit.refit = true;
  fit.ell = p(0);
  fit.c = std::abs(p(1));
  fit.rate = p(2);
  if (dof > 0) {
    const Eigen::MatrixXd cov = (jac.transpose() * jac).ldlt().solve(Eigen::MatrixXd::Identity(3, 3)) *
                                (r.squaredNorm() / static_cast<double>(dof));
    fit.ell_ci = kZ95 * std::sqrt(std::max(0.0, cov(0, 0)));
    fit.c_ci = kZ95 * std::sqrt(std::max(0.0, cov(1, 1)));
    fit.rate_ci = kZ95 * std::sqrt(std::max(0.0, cov(2, 2)));
  } else {
    fit.ell_ci = fit.c_ci = fit.rate_ci = kInf;
  }
  fit.fitted.clear();
  std::vector<double> yhat;
  for (double h : fit.horizons) {
    const double v = p(0) + p(1) * std::exp(-p(2) * h);
    yhat.push_back(v);
    fit.fitted.push_back(std::abs(v - p(0)));
  }
  fit.r2 = r_squared(observed, yhat);
  for (std::size_t i = 0; i < fit.residual.size(); ++i) fit.residual[i] = std::abs(observed[i] - fit.ell);
}

MeasureFlow theta_flow(const ProblemSpec& spec, const EmpiricalMeasure& theta, double dt, double horizon,
                       std::size_t n_particles, std::uint64_t seed) {
  MvOptions mo;
  mo.keep_paths = false;
  mo.atom_times = {0.0};
  return simulate_mv(spec, theta, dt, horizon, n_particles, seed, mo).flow;
}

Ltb1Result ltb1_experiment(const ProblemSpec& spec, std::span<const double> x0, const MeasureFlow& flow,
                           std::span<const double> horizons, double lambda, const LtbOptions& opts) {
  check_grid(horizons);
  Ltb1Result out;
  std::vector<double> res, noise;
  for (double t : horizons) {
    const auto sol = solve_at(spec, flow, x0, t, opts.seed, opts);
    out.y0.push_back(sol.y0);
    res.push_back(std::abs(sol.y0 / t - lambda));
    noise.push_back(sol.y0_stderr / t);
  }
  out.fit = fit_inverse(horizons, res);
  out.fit.noise = noise;

  const double q = spec.constants.growth_q;
  double theta_norm = 0.0;
  if (flow.has_atoms(0)) {
    const auto& pts = flow.atoms(0).points();
    const auto& w = flow.atoms(0).weights();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) acc += w(i) * std::pow(pts.row(i).norm(), 2.0 * q + 2.0);
    theta_norm = std::pow(acc, 1.0 / (2.0 * q + 2.0));
  } else {
    theta_norm = std::sqrt(flow.summary(0).second_moment);
  }
  double x_norm = 0.0;
  for (double v : x0) x_norm += v * v;
  x_norm = std::sqrt(x_norm);
  const double chat = driver_growth_constant(spec, 1000, opts.seed);
  out.envelope = chat * (1.0 + std::pow(x_norm, q + 1.0) + std::pow(theta_norm, q + 1.0));
  out.envelope_ok = out.fit.c <= out.envelope;
  return out;
}

Ltb2Result ltb2_experiment(const ProblemSpec& spec, std::span<const double> x0, const MeasureFlow& flow,
                           std::span<const double> horizons, const ErgodicSolution& ergodic,
                           const LtbOptions& opts) {
  check_grid(horizons);
  Ltb2Result out;
  out.u_bar_x0 = ergodic.u_bar_at(x0);
  const double lambda = ergodic.lambda;
  std::vector<double> v, noise;
  for (double t : horizons) {
    const auto sol = solve_at(spec, flow, x0, t, opts.seed, opts);
    out.y0.push_back(sol.y0);
    v.push_back(sol.y0 - lambda * t - out.u_bar_x0);
    noise.push_back(std::hypot(sol.y0_stderr, t * ergodic.lambda_stderr));
  }
  const double t_max = horizons.back();
  const double ell = v.back();
  out.ell_samples.push_back(ell);
  for (std::size_t s = 1; s <= opts.noise_seeds; ++s) {
    const auto sol = solve_at(spec, flow, x0, t_max, opts.seed + 7919 * s, opts);
    out.ell_samples.push_back(sol.y0 - lambda * t_max - out.u_bar_x0);
  }
  const double floor = sample_sd(out.ell_samples);

  std::vector<double> res(v.size());
  std::vector<bool> trusted(v.size(), false);
  std::size_t n_trusted = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    res[i] = std::abs(v[i] - ell);
    if (i + 1 < v.size() && res[i] > 2.0 * floor) {
      trusted[i] = true;
      ++n_trusted;
    }
  }
  out.fit = fit_exponential(horizons, res, trusted);
  out.fit.observed = v;
  out.fit.noise = noise;
  out.fit.noise_floor = floor;
  out.fit.ell = ell;
  out.fit.ell_ci = kZ95 * floor;
  const std::size_t rest = v.size() - 1;
  if (2 * n_trusted < rest || n_trusted < 2) {
    out.fit.rate_indeterminate = true;
    out.fit.note += (out.fit.note.empty() ? "" : "; ") +
                    std::string("residuals below the solver noise floor over more than half the grid");
  } else if (out.fit.r2 < 0.9) {
    refit_with_ell(out.fit, v);
  }
  return out;
}

Ltb3Result ltb3_experiment(const ProblemSpec& spec, std::span<const double> x0, const MeasureFlow& flow,
                           std::span<const double> horizons, const ErgodicSolution& ergodic,
                           const LtbOptions& opts) {
  check_grid(horizons);
  Ltb3Result out;
  const auto d = static_cast<std::size_t>(spec.dim);
  std::vector<double> grad_bar(d);
  ergodic.u_bar.gradient(0, x0, grad_bar);
  out.z_bar = corrector_z(spec, ergodic, flow.summary(0), x0);

  struct Sample {
    std::vector<double> grad, z;
  };
  auto sample = [&](std::uint64_t seed, double t) {
    const auto sol = solve_at(spec, flow, x0, t, seed, opts);
    Sample smp{std::vector<double>(d), z_from_gradient(sol, spec, flow, 0.0, x0).z};
    sol.u.gradient(0, x0, smp.grad);
    return smp;
  };

  std::vector<double> g, z;
  Sample last;
  for (double t : horizons) {
    last = sample(opts.seed, t);
    g.push_back(norm_diff(last.grad, grad_bar));
    z.push_back(norm_diff(last.z, out.z_bar));
    out.z_t.push_back(last.z);
  }
  std::vector<Sample> samples{last};
  for (std::size_t s = 1; s <= opts.noise_seeds; ++s) samples.push_back(sample(opts.seed + 7919 * s, horizons.back()));
  // Seed-to-seed spread of the estimate itself, summed over components.
  auto floor_of = [&](std::vector<double> Sample::*field) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> comp;
      for (const auto& smp : samples) comp.push_back((smp.*field)[j]);
      const double sd = sample_sd(comp);
      acc += sd * sd;
    }
    return std::sqrt(acc);
  };

  auto build = [&](const std::vector<double>& r, double floor) {
    std::vector<bool> trusted(r.size());
    std::size_t n = 0;
    for (std::size_t i = 0; i < r.size(); ++i) n += (trusted[i] = r[i] > 2.0 * floor) ? 1 : 0;
    auto fit = fit_exponential(horizons, r, trusted);
    fit.noise_floor = floor;
    fit.noise.assign(r.size(), floor);
    if (2 * n < r.size() || n < 2) {
      fit.rate_indeterminate = true;
      if (fit.note.empty()) fit.note = "gaps below the regression noise floor over more than half the grid";
    }
    return fit;
  };
  out.gradient = build(g, floor_of(&Sample::grad));
  out.z = build(z, floor_of(&Sample::z));
  return out;
}

std::vector<double> corrector_z(const ProblemSpec& spec, const ErgodicSolution& ergodic, const MeasureSummary& mu,
                                std::span<const double> x0) {
  const auto d = static_cast<std::size_t>(spec.dim);
  std::vector<double> grad(d), sigma(d * d), z(d, 0.0);
  ergodic.u_bar.gradient(0, x0, grad);
  spec.diffusion(x0, mu, sigma);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < d; ++i) z[j] += grad[i] * sigma[i * d + j];
  return z;
}

ProblemSpec with_corrector_terminal(const ProblemSpec& spec, const ErgodicSolution& ergodic) {
  auto s = spec;
  s.name = spec.name + "+corrector-terminal";
  auto u = ergodic.u_bar;
  s.terminal = [u](State x, const MeasureSummary&) { return u.value(0, x); };
  return s;
}

void write_decay_csv(std::ostream& os, const DecayFit& fit) {
  CsvWriter w(os);
  w.header({"T", "observed", "residual", "fitted", "noise", "trusted"});
  for (std::size_t i = 0; i < fit.horizons.size(); ++i) {
    w.field(fit.horizons[i]).field(fit.observed[i]).field(fit.residual[i]);
    w.field(i < fit.fitted.size() ? fit.fitted[i] : 0.0);
    w.field(i < fit.noise.size() ? fit.noise[i] : 0.0);
    w.field(static_cast<int>(i < fit.trusted.size() && fit.trusted[i])).end();
  }
}

void write_decay_report(std::ostream& os, const DecayFit& fit, const std::string& prefix) {
  os << prefix << "model=" << to_string(fit.model) << '\n';
  os << prefix << "C=" << format_double(fit.c) << '\n';
  os << prefix << "C_ci=" << format_double(fit.c_ci) << '\n';
  if (fit.model == DecayModel::kExponential) {
    os << prefix << "ell=" << format_double(fit.ell) << '\n';
    os << prefix << "ell_ci=" << format_double(fit.ell_ci) << '\n';
    os << prefix << "rate=" << format_double(fit.rate) << '\n';
    os << prefix << "rate_ci=" << format_double(fit.rate_ci) << '\n';
    os << prefix << "rate_indeterminate=" << (fit.rate_indeterminate ? 1 : 0) << '\n';
    os << prefix << "refit=" << (fit.refit ? 1 : 0) << '\n';
    os << prefix << "noise_floor=" << format_double(fit.noise_floor) << '\n';
  }
  os << prefix << "r2=" << format_double(fit.r2) << '\n';
  if (!fit.note.empty()) os << prefix << "note=" << fit.note << '\n';
}

}  // namespace mvlab
