#include "mvlab/bsde.hpp"

#include "mvlab/csv.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <ostream>

namespace mvlab {

BasisDegeneracyError::BasisDegeneracyError(std::size_t node_, double condition_)
    : std::runtime_error("regression basis degenerate at node " + std::to_string(node_) +
                         " (condition number " + format_double(condition_) + ")"),
      node(node_),
      condition(condition_) {}

BasisSpec::BasisSpec(int dim, int degree) : dim_(dim), degree_(degree) {
  if (dim <= 0 || degree < 0) throw std::invalid_argument("basis needs dim > 0 and degree >= 0");
  std::vector<int> e(static_cast<std::size_t>(dim), 0);
  for (int total = 0; total <= degree; ++total) {
    std::function<void(int, int)> rec = [&](int j, int left) {
      if (j == dim - 1) {
        e[static_cast<std::size_t>(j)] = left;
        exponents_.push_back(e);
        return;
      }
      for (int v = left; v >= 0; --v) {
        e[static_cast<std::size_t>(j)] = v;
        rec(j + 1, left - v);
      }
    };
    rec(0, total);
  }
}

void BasisSpec::eval(std::span<const double> s, std::span<double> out) const {
  double pw[8][16];
  for (int j = 0; j < dim_; ++j) {
    pw[j][0] = 1.0;
    for (int e = 1; e <= degree_; ++e) pw[j][e] = pw[j][e - 1] * s[static_cast<std::size_t>(j)];
  }
  for (std::size_t p = 0; p < exponents_.size(); ++p) {
    double v = 1.0;
    for (int j = 0; j < dim_; ++j) v *= pw[j][exponents_[p][static_cast<std::size_t>(j)]];
    out[p] = v;
  }
}

void BasisSpec::gradient(std::span<const double> s, std::span<double> out) const {
  double pw[8][16];
  for (int j = 0; j < dim_; ++j) {
    pw[j][0] = 1.0;
    for (int e = 1; e <= degree_; ++e) pw[j][e] = pw[j][e - 1] * s[static_cast<std::size_t>(j)];
  }
  for (std::size_t p = 0; p < exponents_.size(); ++p) {
    const auto& ex = exponents_[p];
    for (int j = 0; j < dim_; ++j) {
      const int ej = ex[static_cast<std::size_t>(j)];
      double v = 0.0;
      if (ej > 0) {
        v = ej * pw[j][ej - 1];
        for (int i = 0; i < dim_; ++i)
          if (i != j) v *= pw[i][ex[static_cast<std::size_t>(i)]];
      }
      out[p * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(j)] = v;
    }
  }
}

RegressionFunction::RegressionFunction(BasisSpec basis, int outputs, std::vector<double> times)
    : basis_(std::move(basis)), outputs_(outputs), times_(std::move(times)), nodes_(times_.size()) {}

std::size_t RegressionFunction::node_at(double t, bool* off_grid) const {
  if (times_.empty()) throw std::logic_error("regression function has no nodes");
  const auto it = std::lower_bound(times_.begin(), times_.end(), t);
  std::size_t k;
  if (it == times_.begin()) {
    k = 0;
  } else if (it == times_.end()) {
    k = times_.size() - 1;
  } else {
    const auto hi = static_cast<std::size_t>(it - times_.begin());
    k = (t - times_[hi - 1] <= times_[hi] - t) ? hi - 1 : hi;
  }
  if (off_grid) *off_grid = std::abs(times_[k] - t) > 1e-9 * std::max(1.0, std::abs(t));
  return k;
}

namespace {

void standardize(const RegressionFunction::Node& n, State x, std::span<double> s) {
  for (std::size_t j = 0; j < x.size(); ++j)
    s[j] = (x[j] - n.center(static_cast<Eigen::Index>(j))) / n.scale(static_cast<Eigen::Index>(j));
}

}  // namespace

void RegressionFunction::eval(std::size_t k, State x, std::span<double> out) const {
  const auto& n = nodes_.at(k);
  double s[8];
  double phi[256];
  const auto d = static_cast<std::size_t>(basis_.dim());
  standardize(n, x, std::span<double>(s, d));
  basis_.eval(std::span<const double>(s, d), std::span<double>(phi, basis_.size()));
  for (int o = 0; o < outputs_; ++o) {
    double v = 0.0;
    for (std::size_t p = 0; p < basis_.size(); ++p) v += n.coef(static_cast<Eigen::Index>(p), o) * phi[p];
    out[static_cast<std::size_t>(o)] = v;
  }
}

double RegressionFunction::value(std::size_t k, State x) const {
  if (outputs_ == 1) {
    double v = 0.0;
    eval(k, x, std::span<double>(&v, 1));
    return v;
  }
  std::vector<double> v(static_cast<std::size_t>(outputs_));
  eval(k, x, v);
  return v[0];
}

void RegressionFunction::recenter(std::size_t k, std::span<const double> center) {
  auto& n = nodes_.at(k);
  const int d = basis_.dim();
  const auto& ex = basis_.exponents();
  std::map<std::vector<int>, Eigen::Index> index;
  for (std::size_t p = 0; p < ex.size(); ++p) index[ex[p]] = static_cast<Eigen::Index>(p);
  // s_old = s_new + delta
  std::vector<double> delta(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) delta[static_cast<std::size_t>(j)] = (center[static_cast<std::size_t>(j)] - n.center(j)) / n.scale(j);
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(n.coef.rows(), n.coef.cols());
  std::vector<int> f(static_cast<std::size_t>(d));
  for (std::size_t p = 0; p < ex.size(); ++p) {
    const auto& e = ex[p];
    std::function<void(int, double)> rec = [&](int j, double w) {
      if (j == d) {
        coef.row(index.at(f)) += w * n.coef.row(static_cast<Eigen::Index>(p));
        return;
      }
      const int ej = e[static_cast<std::size_t>(j)];
      double binom = 1.0;
      for (int v = 0; v <= ej; ++v) {
        f[static_cast<std::size_t>(j)] = v;
        rec(j + 1, w * binom * std::pow(delta[static_cast<std::size_t>(j)], ej - v));
        binom = binom * (ej - v) / (v + 1);
      }
    };
    rec(0, 1.0);
  }
  n.coef = coef;
  for (int j = 0; j < d; ++j) n.center(j) = center[static_cast<std::size_t>(j)];
}

void RegressionFunction::gradient(std::size_t k, State x, std::span<double> out) const {
  const auto& n = nodes_.at(k);
  const auto d = static_cast<std::size_t>(basis_.dim());
  double s[8];
  std::vector<double> g(basis_.size() * d);
  standardize(n, x, std::span<double>(s, d));
  basis_.gradient(std::span<const double>(s, d), g);
  for (int o = 0; o < outputs_; ++o)
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      for (std::size_t p = 0; p < basis_.size(); ++p) v += n.coef(static_cast<Eigen::Index>(p), o) * g[p * d + j];
      out[static_cast<std::size_t>(o) * d + j] = v / n.scale(static_cast<Eigen::Index>(j));
    }
}

void RegressionFunction::shift(std::size_t k, int o, double delta) { nodes_.at(k).coef(0, o) += delta; }

void write_regression_csv(std::ostream& os, const RegressionFunction& f) {
  CsvWriter w(os);
  w.comment("dim=" + std::to_string(f.basis().dim()) + " degree=" + std::to_string(f.basis().degree()) +
            " outputs=" + std::to_string(f.outputs()));
  std::vector<std::string> names{"node", "time", "output"};
  for (int j = 0; j < f.basis().dim(); ++j) {
    names.push_back("center" + std::to_string(j));
    names.push_back("scale" + std::to_string(j));
  }
  for (const auto& e : f.basis().exponents()) {
    std::string n = "c";
    for (int v : e) n += "_" + std::to_string(v);
    names.push_back(n);
  }
  w.header(names);
  for (std::size_t k = 0; k < f.nodes(); ++k) {
    const auto& n = f.node(k);
    if (n.coef.size() == 0) continue;
    for (int o = 0; o < f.outputs(); ++o) {
      w.field(k).field(f.times()[k]).field(o);
      for (int j = 0; j < f.basis().dim(); ++j) w.field(n.center(j)).field(n.scale(j));
      for (Eigen::Index p = 0; p < n.coef.rows(); ++p) w.field(n.coef(p, o));
      w.end();
    }
  }
}

namespace {

// Least-squares design at one node: standardized basis matrix plus the
// factorized ridge-regularized Gram matrix.
struct Design {
  RegressionFunction::Node frame;
  Eigen::MatrixXd phi;
  Eigen::LLT<Eigen::MatrixXd> llt;
  double condition = 0.0;

  Eigen::MatrixXd solve(const Eigen::MatrixXd& targets) const {
    const auto n = phi.rows();
    const auto chunks = chunk_count(static_cast<std::size_t>(n));
    std::vector<Eigen::MatrixXd> parts(chunks);
    parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t c, std::size_t b, std::size_t e) {
      const auto len = static_cast<Eigen::Index>(e - b);
      parts[c] = phi.middleRows(static_cast<Eigen::Index>(b), len).transpose() *
                 targets.middleRows(static_cast<Eigen::Index>(b), len);
    });
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(phi.cols(), targets.cols());
    for (const auto& p : parts) rhs += p;
    rhs /= static_cast<double>(n);
    return llt.solve(rhs);
  }
};

Design make_design(const BasisSpec& basis, const StateMatrix& x, double ridge, std::size_t node) {
  Design d;
  const auto n = x.rows();
  const auto dim = x.cols();
  d.frame.center = x.colwise().mean().transpose();
  d.frame.scale.resize(dim);
  d.frame.lo = x.colwise().minCoeff().transpose();
  d.frame.hi = x.colwise().maxCoeff().transpose();
  for (Eigen::Index j = 0; j < dim; ++j) {
    const double var = (x.col(j).array() - d.frame.center(j)).square().mean();
    d.frame.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  const auto p = static_cast<Eigen::Index>(basis.size());
  d.phi.resize(n, p);
  Eigen::MatrixXd& phi = d.phi;
  parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t, std::size_t b, std::size_t e) {
    std::vector<double> s(static_cast<std::size_t>(dim)), row_vals(static_cast<std::size_t>(p));
    for (std::size_t i = b; i < e; ++i) {
      standardize(d.frame, row(x, static_cast<Eigen::Index>(i)), s);
      basis.eval(s, row_vals);
      for (Eigen::Index q = 0; q < p; ++q) phi(static_cast<Eigen::Index>(i), q) = row_vals[static_cast<std::size_t>(q)];
    }
  });
  const auto chunks = chunk_count(static_cast<std::size_t>(n));
  std::vector<Eigen::MatrixXd> parts(chunks);
  parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t c, std::size_t b, std::size_t e) {
    const auto blk = phi.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b));
    parts[c] = blk.transpose() * blk;
  });
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  for (const auto& g : parts) gram += g;
  gram /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  d.condition = lo > 0.0 ? std::sqrt(hi / lo) : std::numeric_limits<double>::infinity();
  if (!(d.condition <= 1e12)) throw BasisDegeneracyError(node, d.condition);
  gram.diagonal().array() += ridge;
  d.llt.compute(gram);
  return d;
}

Eigen::VectorXd fitted(const Design& d, const Eigen::MatrixXd& coef, int o) { return d.phi * coef.col(o); }

// Regenerates Euler states from sparse checkpoints so the backward pass never
// holds all N x M states at once.
class PathReplay {
 public:
  PathReplay(const ProblemSpec& spec, const MeasureFlow& flow, const TimeGrid& grid, StateMatrix x0,
             std::uint64_t seed, Stream stream)
      : spec_(spec), flow_(flow), grid_(grid), seed_(seed), stream_(stream) {
    span_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(grid.steps)))));
    StateMatrix x = std::move(x0);
    for (std::size_t k = 0; k < grid.steps; ++k) {
      if (k % span_ == 0) checkpoints_.push_back(x);
      step(x, k);
    }
    if (grid.steps == 0) checkpoints_.push_back(x);
    terminal_ = std::move(x);
  }

  const StateMatrix& state(std::size_t k) {
    if (k == grid_.steps) return terminal_;
    const std::size_t seg = k / span_;
    if (seg != cached_) {
      const std::size_t begin = seg * span_;
      const std::size_t end = std::min(begin + span_, grid_.steps);
      cache_.assign(1, checkpoints_[seg]);
      for (std::size_t j = begin; j + 1 < end; ++j) {
        cache_.push_back(cache_.back());
        step(cache_.back(), j);
      }
      cached_ = seg;
    }
    return cache_[k - seg * span_];
  }

  const StateMatrix& terminal() const { return terminal_; }

 private:
  void step(StateMatrix& x, std::size_t k) {
    const double t = grid_.time(k);
    euler_step_ensemble(spec_, x, flow_.summary_at(t), t, grid_.dt, seed_, stream_, k);
  }

  const ProblemSpec& spec_;
  const MeasureFlow& flow_;
  TimeGrid grid_;
  std::uint64_t seed_;
  Stream stream_;
  std::size_t span_ = 1;
  std::vector<StateMatrix> checkpoints_;
  StateMatrix terminal_;
  std::vector<StateMatrix> cache_;
  std::size_t cached_ = std::numeric_limits<std::size_t>::max();
};

double flow_terminal_sd(const MeasureFlow& flow, double horizon) {
  const auto& s = flow.summary_at(horizon);
  double m2 = 0.0;
  for (double m : s.mean) m2 += m * m;
  const double var = (s.second_moment - m2) / static_cast<double>(std::max<std::size_t>(1, s.mean.size()));
  return var > 1e-12 ? std::sqrt(var) : 1.0;
}

}  // namespace

double BsdeSolution::y0_at(State x) const {
  const double c = condexp0.value(0, x);
  const auto zz = z0_at(x);
  return (c + dt * driver(x, mu0, zz)) / (1.0 + alpha * dt);
}

std::vector<double> BsdeSolution::z0_at(State x) const {
  std::vector<double> out(static_cast<std::size_t>(z.outputs()));
  z.eval(0, x, out);
  return out;
}

BsdeSolution solve_finite_bsde(const ProblemSpec& spec, const MeasureFlow& flow, std::span<const double> x0,
                               double horizon, double dt, std::size_t n_particles, std::uint64_t seed,
                               const BsdeOptions& opts) {
  const int d = spec.dim;
  const auto du = static_cast<std::size_t>(d);
  if (x0.size() != du) throw std::invalid_argument("bsde: x0 has the wrong dimension");
  if (!spec.driver || !spec.terminal) throw std::invalid_argument("bsde: spec needs a driver and a terminal condition");
  if (n_particles < 2) throw std::invalid_argument("bsde: need at least two regression paths");
  const int q1 = static_cast<int>(std::ceil(spec.constants.growth_q)) + 1;
  const int degree = opts.degree > 0 ? opts.degree : std::max(q1, 3);
  if (degree < q1) throw std::invalid_argument("bsde: basis degree must be at least q + 1");
  if (d > 8 || degree > 15) throw std::invalid_argument("bsde: basis limited to dim <= 8 and degree <= 15");
  const auto grid = TimeGrid::make(dt, horizon);
  if (grid.steps == 0) throw std::invalid_argument("bsde: horizon shorter than one step");
  if (!flow.covers(grid.end()))
    throw CoverageError("bsde: measure flow ends before the horizon " + format_double(grid.end()));

  const BasisSpec basis(d, degree);
  const double spread = opts.spread >= 0.0 ? opts.spread : flow_terminal_sd(flow, grid.end());
  const auto n = static_cast<Eigen::Index>(n_particles);
  StateMatrix cloud(n, d);
  parallel_for(n_particles, [&](std::size_t i) {
    std::vector<double> z(du);
    gaussian_block({seed, Stream::kRegressionCloud, i, 0}, z);
    for (std::size_t j = 0; j < du; ++j) cloud(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x0[j] + spread * z[j];
  });
  PathReplay replay(spec, flow, grid, std::move(cloud), seed, opts.stream);

  BsdeSolution sol;
  sol.x0.assign(x0.begin(), x0.end());
  sol.horizon = grid.end();
  sol.dt = grid.dt;
  sol.alpha = opts.alpha;
  sol.steps = grid.steps;
  sol.spread = spread;
  sol.driver = spec.driver;
  sol.mu0 = flow.summary_at(0.0);
  std::vector<double> node_times(grid.steps);
  for (std::size_t k = 0; k < grid.steps; ++k) node_times[k] = grid.time(k);
  sol.u = RegressionFunction(basis, 1, node_times);
  sol.z = RegressionFunction(basis, d, node_times);
  sol.condexp0 = RegressionFunction(basis, 1, {0.0});
  sol.residual_rms.assign(grid.steps, 0.0);
  const bool picard_variant = opts.picard > 1 && spec.driver_depends_on_z;
  if (picard_variant) sol.picard_history.assign(opts.picard - 1, 0.0);

  const auto& xm = replay.state(grid.steps);
  const auto& mum = flow.summary_at(grid.end());
  Eigen::MatrixXd y(n, 1);
  parallel_for(n_particles, [&](std::size_t i) {
    y(static_cast<Eigen::Index>(i), 0) = spec.terminal(row(xm, static_cast<Eigen::Index>(i)), mum);
  });

  const double sq = std::sqrt(grid.dt);
  const double damp = 1.0 / (1.0 + opts.alpha * grid.dt);
  double martingale_var = 0.0;
  Eigen::MatrixXd target(n, d), zmat(n, d);
  for (std::size_t kk = grid.steps; kk-- > 0;) {
    const double t = grid.time(kk);
    const auto& x = replay.state(kk);
    const auto& mu = flow.summary_at(t);
    const Design des = make_design(basis, x, opts.ridge, kk);
    const Eigen::MatrixXd by = des.solve(y);
    const Eigen::VectorXd c = fitted(des, by, 0);
    parallel_chunks(n_particles, [&](std::size_t, std::size_t b, std::size_t e) {
      std::vector<double> xi(du);
      for (std::size_t i = b; i < e; ++i) {
        gaussian_block({seed, opts.stream, i, kk}, xi);
        const double r = y(static_cast<Eigen::Index>(i), 0) - c(static_cast<Eigen::Index>(i));
        for (std::size_t j = 0; j < du; ++j)
          target(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r * xi[j] / sq;
      }
    });
    const Eigen::MatrixXd bz = des.solve(target);
    zmat.noalias() = des.phi * bz;
    const double msq = (y.col(0) - c).squaredNorm() / static_cast<double>(n);
    sol.residual_rms[kk] = std::sqrt(msq);
    martingale_var += msq;

    auto update = [&](const Eigen::MatrixXd& zz, Eigen::MatrixXd& out) {
      parallel_for(n_particles, [&](std::size_t i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const std::span<const double> zi(zz.data() + ii * zz.cols(), du);
        out(ii, 0) = (c(ii) + grid.dt * spec.driver(row(x, ii), mu, zi)) * damp;
      });
    };
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMat zrow = zmat;
    Eigen::MatrixXd ynew(n, 1);
    update(zrow, ynew);
    if (picard_variant) {
      RegressionFunction iterate(basis, 1, {t});
      for (std::size_t j = 1; j < opts.picard; ++j) {
        iterate.node(0) = des.frame;
        iterate.node(0).coef = des.solve(ynew);
        parallel_for(n_particles, [&](std::size_t i) {
          const auto ii = static_cast<Eigen::Index>(i);
          std::vector<double> g(du), sig(du * du);
          iterate.gradient(0, row(x, ii), g);
          spec.diffusion(row(x, ii), mu, sig);
          for (std::size_t a = 0; a < du; ++a) {
            double v = 0.0;
            for (std::size_t b = 0; b < du; ++b) v += g[b] * sig[b * du + a];
            zrow(ii, static_cast<Eigen::Index>(a)) = v;
          }
        });
        Eigen::MatrixXd next(n, 1);
        update(zrow, next);
        const double diff = std::sqrt((next - ynew).squaredNorm() / static_cast<double>(n));
        sol.picard_history[j - 1] = std::max(sol.picard_history[j - 1], diff);
        ynew = std::move(next);
      }
    }
    y = std::move(ynew);

    if (opts.keep_functions || kk == 0) {
      auto& un = sol.u.node(kk);
      un = des.frame;
      un.coef = des.solve(y);
      auto& zn = sol.z.node(kk);
      zn = des.frame;
      zn.coef = bz;
    }
    if (kk == 0) {
      auto& cn = sol.condexp0.node(0);
      cn = des.frame;
      cn.coef = by;
    }
  }
  for (std::size_t j = 1; j < sol.picard_history.size(); ++j)
    if (sol.picard_history[j] > 1.1 * sol.picard_history[j - 1]) sol.picard_warning = true;
  sol.y0_stderr = std::sqrt(martingale_var / static_cast<double>(n));
  sol.y0 = sol.y0_at(x0);
  sol.z0 = sol.z0_at(x0);
  return sol;
}

GradientZ z_from_gradient(const BsdeSolution& sol, const ProblemSpec& spec, const MeasureFlow& flow, double t,
                          std::span<const double> x) {
  GradientZ out;
  out.node = sol.u.node_at(t, &out.off_grid);
  if (sol.u.node(out.node).coef.size() == 0)
    throw std::logic_error("bsde solution kept no regression at node " + std::to_string(out.node));
  const auto d = static_cast<std::size_t>(spec.dim);
  std::vector<double> g(d), sig(d * d);
  sol.u.gradient(out.node, x, g);
  spec.diffusion(x, flow.summary_at(sol.u.times()[out.node]), sig);
  out.z.assign(d, 0.0);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) out.z[a] += g[b] * sig[b * d + a];
  return out;
}

MonteCarloValue plain_monte_carlo(const ProblemSpec& spec, const MeasureFlow& flow, std::span<const double> x0,
                                  double horizon, double dt, std::size_t n_particles, std::uint64_t seed) {
  const auto grid = TimeGrid::make(dt, horizon);
  const auto du = static_cast<std::size_t>(spec.dim);
  StateMatrix x(static_cast<Eigen::Index>(n_particles), spec.dim);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < du; ++j) x(i, static_cast<Eigen::Index>(j)) = x0[j];
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.rows());
  const std::vector<double> zero(du, 0.0);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const double t = grid.time(k);
    const auto& mu = flow.summary_at(t);
    parallel_for(n_particles, [&](std::size_t i) {
      const auto ii = static_cast<Eigen::Index>(i);
      acc(ii) += grid.dt * spec.driver(row(x, ii), mu, zero);
    });
    euler_step_ensemble(spec, x, mu, t, grid.dt, seed, Stream::kMisc, k);
  }
  const auto& mum = flow.summary_at(grid.end());
  parallel_for(n_particles, [&](std::size_t i) {
    const auto ii = static_cast<Eigen::Index>(i);
    acc(ii) += spec.terminal(row(x, ii), mum);
  });
  MonteCarloValue v;
  v.mean = acc.mean();
  const double nn = static_cast<double>(n_particles);
  v.stderr_ = std::sqrt((acc.array() - v.mean).square().sum() / std::max(1.0, nn - 1.0) / nn);
  return v;
}

void write_bsde_report(std::ostream& os, const BsdeSolution& sol) {
  os << "y0=" << format_double(sol.y0) << '\n';
  os << "y0_stderr=" << format_double(sol.y0_stderr) << '\n';
  for (std::size_t j = 0; j < sol.z0.size(); ++j) os << "z0_" << j << '=' << format_double(sol.z0[j]) << '\n';
  os << "horizon=" << format_double(sol.horizon) << '\n';
  os << "dt=" << format_double(sol.dt) << '\n';
  os << "steps=" << sol.steps << '\n';
  os << "alpha=" << format_double(sol.alpha) << '\n';
  os << "spread=" << format_double(sol.spread) << '\n';
  double worst = 0.0;
  for (double r : sol.residual_rms) worst = std::max(worst, r);
  os << "max_residual_rms=" << format_double(worst) << '\n';
  for (std::size_t j = 0; j < sol.picard_history.size(); ++j)
    os << "picard_" << j + 1 << '=' << format_double(sol.picard_history[j]) << '\n';
  os << "picard_warning=" << (sol.picard_warning ? 1 : 0) << '\n';
}

}  // namespace mvlab
