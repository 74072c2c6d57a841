#include "mvlab/coupling.hpp"

#include "mvlab/csv.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/quadrature.hpp"
#include "mvlab/rng.hpp"
#include "mvlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

namespace mvlab {

LyapunovConstants LyapunovConstants::from(const Constants& c) {
  return {c.eta, c.m_b, c.ball_radius, c.kb_x, c.ks_x, c.sigma0};
}

double kappa_star(const LyapunovConstants& c, double r) {
  const double inside = r <= c.ball_radius ? std::min(c.m_b, c.kb_x * r) + c.eta * r : 0.0;
  return inside - c.a() * r;
}

namespace {

const GaussLegendre& rule16() {
  static const GaussLegendre g(16);
  return g;
}

double knee(const LyapunovConstants& c) {
  return c.kb_x > 0.0 ? c.m_b / c.kb_x : std::numeric_limits<double>::infinity();
}

// (1 / 2 sigma0^2) int_0^u kappa*
double exponent(const LyapunovConstants& c, double u) {
  const double two_s2 = 2.0 * c.sigma0 * c.sigma0;
  auto inner = [&](double v) {
    const double k = knee(c);
    const double part = v <= k ? 0.5 * c.kb_x * v * v : 0.5 * c.m_b * k + c.m_b * (v - k);
    return part + 0.5 * c.ks_x * v * v;
  };
  const double rr = c.ball_radius;
  if (u <= rr) return inner(u) / two_s2;
  return (inner(rr) - 0.5 * c.a() * (u * u - rr * rr)) / two_s2;
}

double integrate_split(const LyapunovConstants& c, double lo, double hi, const auto& f, double width) {
  std::vector<double> cuts{lo};
  for (double b : {knee(c), c.ball_radius})
    if (b > lo && b < hi) cuts.push_back(b);
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) s += rule16().composite(f, cuts[i], cuts[i + 1], width);
  return s;
}

}  // namespace

LyapunovDerivatives lyapunov_derivatives(const LyapunovConstants& c, double r) {
  const double two_s2 = 2.0 * c.sigma0 * c.sigma0;
  const double a = c.a();
  const double rr = c.ball_radius;
  LyapunovDerivatives out;
  if (r > rr || (rr == 0.0)) {
    // Beyond the ball kappa* is linear and the inner integral is explicit.
    out.dphi = two_s2 / a;
    out.ddphi = r > rr ? 0.0 : -kappa_star(c, r) * out.dphi / two_s2 - r;
    return out;
  }
  const double ir = exponent(c, r);
  const double tail = std::exp(exponent(c, rr) - ir) * two_s2 / a;
  const double body =
      integrate_split(c, r, rr, [&](double u) { return u * std::exp(exponent(c, u) - ir); }, 0.1);
  out.dphi = tail + body;
  out.ddphi = -kappa_star(c, r) * out.dphi / two_s2 - r;
  return out;
}

double LyapunovTable::dphi0_bound() const {
  const auto& c = constants;
  const double s2 = c.sigma0 * c.sigma0;
  const double growth = c.ball_radius > 0.0 ? (c.eta + 2.0 * c.m_b / c.ball_radius) * c.ball_radius * c.ball_radius : 0.0;
  return std::exp(growth / (4.0 * s2)) * 2.0 * s2 / c.a();
}

LyapunovTable build_lyapunov(const LyapunovConstants& c, double r_max, std::size_t grid) {
  if (!(c.eta > c.ks_x)) throw AssumptionViolation("Lyapunov function needs eta > K^sigma_x");
  if (!(c.sigma0 > 0.0)) throw AssumptionViolation("Lyapunov function needs sigma0 > 0");
  if (!(r_max > c.ball_radius)) throw std::invalid_argument("r_max must exceed the ball radius");
  if (grid < 2) throw std::invalid_argument("Lyapunov grid needs at least two nodes");
  LyapunovTable t;
  t.constants = c;
  t.r.resize(grid);
  t.phi.resize(grid);
  t.dphi.resize(grid);
  t.ddphi.resize(grid);
  const GaussLegendre outer(8);
  for (std::size_t j = 0; j < grid; ++j) t.r[j] = r_max * static_cast<double>(j) / static_cast<double>(grid - 1);
  parallel_for(grid, [&](std::size_t j) {
    const auto d = lyapunov_derivatives(c, t.r[j]);
    t.dphi[j] = d.dphi;
    t.ddphi[j] = d.ddphi;
  });
  std::vector<double> pieces(grid, 0.0);
  parallel_for(grid - 1, [&](std::size_t j) {
    std::vector<double> cuts{t.r[j]};
    for (double b : {knee(c), c.ball_radius})
      if (b > t.r[j] && b < t.r[j + 1]) cuts.push_back(b);
    cuts.push_back(t.r[j + 1]);
    std::sort(cuts.begin(), cuts.end());
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
      s += outer.integrate([&](double u) { return lyapunov_derivatives(c, u).dphi; }, cuts[i], cuts[i + 1]);
    pieces[j + 1] = s;
  });
  t.phi[0] = 0.0;
  for (std::size_t j = 1; j < grid; ++j) t.phi[j] = t.phi[j - 1] + pieces[j];
  return t;
}

LyapunovCheck verify_lyapunov_inequality(const LyapunovTable& table, std::span<const double> kappa_hat, double tol) {
  if (kappa_hat.size() != table.size()) throw std::invalid_argument("kappa samples must match the table grid");
  const auto& c = table.constants;
  const double two_s2 = 2.0 * c.sigma0 * c.sigma0;
  LyapunovCheck out;
  out.worst_margin = -std::numeric_limits<double>::infinity();
  out.worst_relative = -std::numeric_limits<double>::infinity();
  out.margin_ok = true;
  out.signs_ok = std::abs(table.phi.front()) == 0.0;
  out.envelope_ok = table.dphi0() <= table.dphi0_bound() * (1.0 + tol);
  const double a = c.a();
  for (std::size_t j = 0; j < table.size(); ++j) {
    const double r = table.r[j];
    const double margin = two_s2 * table.ddphi[j] + kappa_hat[j] * table.dphi[j] + two_s2 * r;
    const double scale = std::max(1.0, two_s2 * std::abs(table.ddphi[j]) + std::abs(kappa_hat[j]) * table.dphi[j] + two_s2 * r);
    if (margin > out.worst_margin) {
      out.worst_margin = margin;
      out.at_r = r;
    }
    out.worst_relative = std::max(out.worst_relative, margin / scale);
    if (margin > tol * scale) out.margin_ok = false;
    const double dscale = std::max(1.0, std::abs(kappa_star(c, r)) * table.dphi[j] / two_s2 + r);
    if (table.dphi[j] < 0.0 || table.ddphi[j] > tol * dscale) out.signs_ok = false;
    if (j > 0 && table.phi[j] < table.phi[j - 1]) out.signs_ok = false;
    const double lower = two_s2 * r / a;
    const double upper = table.dphi0() * r;
    if (table.phi[j] < lower * (1.0 - tol) - 1e-300 || table.phi[j] > upper * (1.0 + tol) + 1e-300)
      out.envelope_ok = false;
  }
  return out;
}

LyapunovCheck verify_lyapunov_inequality(const LyapunovTable& table, const std::function<double(double)>& kappa_hat,
                                         double tol) {
  std::vector<double> k(table.size());
  for (std::size_t j = 0; j < k.size(); ++j) k[j] = kappa_hat(table.r[j]);
  return verify_lyapunov_inequality(table, std::span<const double>(k), tol);
}

std::vector<double> empirical_kappa(const ProblemSpec& spec, const MeasureSummary& mu, std::span<const double> radii,
                                    std::size_t pairs_per_radius, std::uint64_t seed) {
  const int d = spec.dim;
  const auto du = static_cast<std::size_t>(d);
  const double s0 = spec.constants.sigma0;
  const double spread = spec.constants.ball_radius + 3.0;
  std::vector<double> out(radii.size(), 0.0);
  parallel_for(radii.size(), [&](std::size_t i) {
    const double r = radii[i];
    if (!(r > 0.0)) return;
    std::vector<double> x(du), dir(du), xp(du), bx(du), bxp(du), sx(du * du), sxp(du * du), sbx(du * du),
        sbxp(du * du);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < pairs_per_radius; ++p) {
      gaussian_block({seed, Stream::kAudit, i, 2 * p}, x);
      gaussian_block({seed, Stream::kAudit, i, 2 * p + 1}, dir);
      double n = 0.0;
      for (double v : dir) n += v * v;
      n = std::sqrt(n);
      for (std::size_t j = 0; j < du; ++j) {
        x[j] *= spread;
        xp[j] = x[j] - r * dir[j] / n;
      }
      spec.drift(0.0, x, mu, bx);
      spec.drift(0.0, xp, mu, bxp);
      spec.diffusion(x, mu, sx);
      spec.diffusion(xp, mu, sxp);
      sigma_bar(sx, d, s0, sbx);
      sigma_bar(sxp, d, s0, sbxp);
      double inner = 0.0, gap = 0.0;
      for (std::size_t j = 0; j < du; ++j) inner += (x[j] - xp[j]) * (bx[j] - bxp[j]);
      for (std::size_t j = 0; j < du * du; ++j) gap += (sbx[j] - sbxp[j]) * (sbx[j] - sbxp[j]);
      best = std::max(best, inner / r + gap / (2.0 * r));
    }
    out[i] = best;
  });
  return out;
}

void write_lyapunov_csv(std::ostream& os, const LyapunovTable& table) {
  const auto& c = table.constants;
  CsvWriter w(os);
  w.comment("eta=" + format_double(c.eta) + " m_b=" + format_double(c.m_b) + " R=" + format_double(c.ball_radius) +
            " kb_x=" + format_double(c.kb_x) + " ks_x=" + format_double(c.ks_x) + " sigma0=" + format_double(c.sigma0));
  w.header({"r", "kappa_star", "phi", "dphi", "ddphi"});
  for (std::size_t j = 0; j < table.size(); ++j)
    w.field(table.r[j]).field(kappa_star(c, table.r[j])).field(table.phi[j]).field(table.dphi[j]).field(table.ddphi[j]).end();
}

double mollifier_pi1(double r, double delta) {
  const double s = std::clamp((2.0 * r - delta) / delta, 0.0, 1.0);
  return std::sin(0.5 * std::numbers::pi * s);
}

double mollifier_pi2(double r, double delta) {
  const double s = std::clamp((2.0 * r - delta) / delta, 0.0, 1.0);
  return std::cos(0.5 * std::numbers::pi * s);
}

void sigma_bar(std::span<const double> sigma, int d, double sigma0, std::span<double> out) {
  const double s02 = sigma0 * sigma0;
  if (d == 1) {
    const double v = sigma[0] * sigma[0] - s02;
    if (v < -1e-12 * std::max(1.0, s02)) throw EllipticityError("sigma^2 - sigma0^2 is negative at a visited state");
    out[0] = std::sqrt(std::max(0.0, v));
    return;
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> s(sigma.data(), d, d);
  Eigen::MatrixXd a = s * s.transpose() - s02 * Eigen::MatrixXd::Identity(d, d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const auto& ev = es.eigenvalues();
  if (ev.minCoeff() < -1e-12 * std::max(1.0, s02))
    throw EllipticityError("sigma sigma^T - sigma0^2 I is indefinite at a visited state");
  const Eigen::MatrixXd root =
      es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data(), d, d) = root;
}

CouplingRun simulate_reflection_coupling(const ProblemSpec& spec, const MeasureFlow& flow,
                                         const MeasureFlow& flow_prime, std::span<const double> x0,
                                         std::span<const double> x0_prime, double delta, double dt, double horizon,
                                         std::size_t n_paths, std::uint64_t seed, const CouplingOptions& opts) {
  const int d = spec.dim;
  const auto du = static_cast<std::size_t>(d);
  if (x0.size() != du || x0_prime.size() != du) throw std::invalid_argument("coupling: start points have wrong dimension");
  if (!(delta > 0.0)) throw std::invalid_argument("coupling: mollifier width must be positive");
  if (spec.constants.ball_radius > 0.0 && !(delta < spec.constants.ball_radius))
    throw std::invalid_argument("coupling: mollifier width must be below the ball radius");
  const auto grid = TimeGrid::make(dt, horizon);
  for (const auto* f : {&flow, &flow_prime})
    if (f->nodes() == 0 || !f->covers(grid.end()))
      throw CoverageError("coupling: measure flow does not cover the horizon " + format_double(grid.end()));

  const std::size_t stride = std::max<std::size_t>(1, opts.record_every);
  std::vector<std::size_t> record_steps;
  for (std::size_t k = 0; k <= grid.steps; ++k)
    if (k % stride == 0 || k == grid.steps) record_steps.push_back(k);

  CouplingRun run;
  run.delta = delta;
  for (auto k : record_steps) run.times.push_back(grid.time(k));
  run.radius = StateMatrix::Zero(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(record_steps.size()));
  run.terminal.resize(static_cast<Eigen::Index>(n_paths), d);
  run.terminal_prime.resize(static_cast<Eigen::Index>(n_paths), d);
  const double s0 = spec.constants.sigma0;
  const double sq = std::sqrt(grid.dt);

  parallel_chunks(n_paths, [&](std::size_t, std::size_t b, std::size_t e) {
    std::vector<double> x(du), y(du), bx(du), by(du), sx(du * du), sy(du * du), sbx(du * du), sby(du * du), e_t(du),
        xi1(du), xi2(du), xi3(du);
    for (std::size_t p = b; p < e; ++p) {
      std::copy(x0.begin(), x0.end(), x.begin());
      std::copy(x0_prime.begin(), x0_prime.end(), y.begin());
      std::size_t next = 0;
      for (std::size_t k = 0;; ++k) {
        double r = 0.0;
        for (std::size_t j = 0; j < du; ++j) r += (x[j] - y[j]) * (x[j] - y[j]);
        r = std::sqrt(r);
        if (next < record_steps.size() && record_steps[next] == k)
          run.radius(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(next++)) = r;
        if (k == grid.steps) break;
        const double t = grid.time(k);
        const auto& mu = flow.summary_at(t);
        const auto& nu = flow_prime.summary_at(t);
        spec.drift(t, x, mu, bx);
        spec.drift(t, y, nu, by);
        spec.diffusion(x, mu, sx);
        spec.diffusion(y, nu, sy);
        sigma_bar(sx, d, s0, sbx);
        sigma_bar(sy, d, s0, sby);
        for (std::size_t j = 0; j < du; ++j) e_t[j] = r > 0.0 ? (x[j] - y[j]) / r : 0.0;
        gaussian_block({seed, Stream::kCouplingReflected, p, k}, xi1);
        gaussian_block({seed, Stream::kCouplingShared, p, k}, xi2);
        gaussian_block({seed, Stream::kCouplingResidual, p, k}, xi3);
        const double p1 = mollifier_pi1(r, delta);
        const double p2 = mollifier_pi2(r, delta);
        double proj = 0.0;
        for (std::size_t j = 0; j < du; ++j) proj += e_t[j] * xi1[j];
        for (std::size_t i = 0; i < du; ++i) {
          double rx = 0.0, ry = 0.0;
          for (std::size_t j = 0; j < du; ++j) {
            rx += sbx[i * du + j] * xi3[j];
            ry += sby[i * du + j] * xi3[j];
          }
          const double common = s0 * p2 * xi2[i];
          x[i] += bx[i] * grid.dt + sq * (s0 * p1 * xi1[i] + common + rx);
          y[i] += by[i] * grid.dt + sq * (s0 * p1 * (xi1[i] - 2.0 * e_t[i] * proj) + common + ry);
        }
        // A sign change of the gap along e within one step means the paths met.
        if (r > 0.0) {
          double along = 0.0;
          for (std::size_t j = 0; j < du; ++j) along += (x[j] - y[j]) * e_t[j];
          if (along <= 0.0) y = x;
        }
        if (!std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); }) ||
            !std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); }))
          throw BlowUpError(k, grid.time(k + 1), p);
      }
      for (std::size_t j = 0; j < du; ++j) {
        run.terminal(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) = x[j];
        run.terminal_prime(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) = y[j];
      }
    }
  });

  const auto n = static_cast<double>(n_paths);
  for (Eigen::Index j = 0; j < run.radius.cols(); ++j) {
    const double m = run.radius.col(j).mean();
    const double var = n > 1 ? (run.radius.col(j).array() - m).square().sum() / (n - 1.0) : 0.0;
    run.mean_r.push_back(m);
    run.stderr_r.push_back(std::sqrt(var / n));
  }

  const double guess = spec.nominal_rate();
  run.fit_start = opts.fit_start >= 0.0 ? opts.fit_start : (guess > 0.0 ? 1.0 / guess : 0.0);
  std::vector<double> ft, fy;
  std::size_t first = run.times.size();
  for (std::size_t j = 0; j < run.times.size(); ++j) {
    if (run.times[j] + 1e-12 < run.fit_start) continue;
    first = std::min(first, j);
    if (run.mean_r[j] > 0.0) {
      ft.push_back(run.times[j]);
      fy.push_back(std::log(run.mean_r[j]));
    }
  }
  run.fitted_points = ft.size();
  if (ft.size() >= 2) {
    const auto [a, slope] = linear_fit(ft, fy);
    run.intercept = a;
    run.rate = -slope;
  } else {
    run.rate = std::numeric_limits<double>::quiet_NaN();
  }
  run.monotone_after_transient = true;
  run.worst_increase = -std::numeric_limits<double>::infinity();
  for (std::size_t j = first; j + 1 < run.times.size(); ++j) {
    const double se = std::hypot(run.stderr_r[j], run.stderr_r[j + 1]);
    const double inc = run.mean_r[j + 1] - run.mean_r[j];
    const double z = se > 0.0 ? inc / se : (inc > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    run.worst_increase = std::max(run.worst_increase, z);
    if (inc > 2.0 * se) run.monotone_after_transient = false;
  }
  return run;
}

void write_coupling_csv(std::ostream& os, const CouplingRun& run) {
  CsvWriter w(os);
  w.comment("delta=" + format_double(run.delta) + " rate=" + format_double(run.rate) +
            " fit_start=" + format_double(run.fit_start));
  w.header({"time", "mean_r", "stderr_r"});
  for (std::size_t j = 0; j < run.times.size(); ++j) w.field(run.times[j]).field(run.mean_r[j]).field(run.stderr_r[j]).end();
}

}  // namespace mvlab
