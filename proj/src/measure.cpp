#include "mvlab/measure.hpp"

#include "mvlab/csv.hpp"
#include "mvlab/model.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mvlab {

EmpiricalMeasure::EmpiricalMeasure(StateMatrix points, Eigen::VectorXd weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.rows() == 0 || points_.cols() == 0) throw std::invalid_argument("empirical measure needs at least one atom");
  if (weights_.size() != points_.rows()) throw std::invalid_argument("weights and atoms differ in count");
  if (!points_.allFinite()) throw std::invalid_argument("empirical measure has a non-finite atom");
  if ((weights_.array() < 0.0).any() || !weights_.allFinite())
    throw std::invalid_argument("weights must be finite and nonnegative");
  const double total = weights_.sum();
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("weights must sum to one");
  const double w0 = weights_(0);
  equal_weights_ = (weights_.array() == w0).all();
  cumulative_.resize(weights_.size());
  std::partial_sum(weights_.begin(), weights_.end(), cumulative_.begin());
}

EmpiricalMeasure EmpiricalMeasure::uniform(StateMatrix points) {
  const auto n = points.rows();
  if (n == 0) throw std::invalid_argument("empirical measure needs at least one atom");
  EmpiricalMeasure mu;
  mu.points_ = std::move(points);
  mu.weights_ = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  if (!mu.points_.allFinite()) throw std::invalid_argument("empirical measure has a non-finite atom");
  mu.equal_weights_ = true;
  mu.cumulative_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) mu.cumulative_(i) = static_cast<double>(i + 1) / static_cast<double>(n);
  return mu;
}

EmpiricalMeasure EmpiricalMeasure::dirac(std::span<const double> x) {
  StateMatrix p(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) p(0, static_cast<Eigen::Index>(j)) = x[j];
  return uniform(std::move(p));
}

Eigen::VectorXd EmpiricalMeasure::mean() const { return points_.transpose() * weights_; }

std::size_t EmpiricalMeasure::sample_index(double u) const {
  if (equal_weights_) {
    const auto n = size();
    return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
  }
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min<std::size_t>(size() - 1, static_cast<std::size_t>(it - cumulative_.begin()));
}

MeasureSummary summarize(const EmpiricalMeasure& mu, const std::vector<FeatureFn>& features) {
  MeasureSummary s;
  const int d = mu.dim();
  s.mean.assign(static_cast<std::size_t>(d), 0.0);
  s.features.assign(features.size(), 0.0);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double w = mu.weights()(static_cast<Eigen::Index>(i));
    const State x = mu.atom(i);
    double sq = 0.0;
    for (int j = 0; j < d; ++j) {
      s.mean[static_cast<std::size_t>(j)] += w * x[static_cast<std::size_t>(j)];
      sq += x[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
    }
    s.second_moment += w * sq;
    for (std::size_t f = 0; f < features.size(); ++f) s.features[f] += w * features[f](x);
  }
  return s;
}

MeasureSummary summarize(const StateMatrix& points, const std::vector<FeatureFn>& features) {
  // Equal weights; accumulated chunk by chunk so the result does not depend
  // on the number of worker threads.
  const auto n = static_cast<std::size_t>(points.rows());
  const auto d = static_cast<std::size_t>(points.cols());
  const std::size_t width = d + 1 + features.size();
  std::vector<double> partial(chunk_count(n) * width, 0.0);
  parallel_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
    double* acc = partial.data() + c * width;
    for (std::size_t i = b; i < e; ++i) {
      const State x = row(points, static_cast<Eigen::Index>(i));
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        acc[j] += x[j];
        sq += x[j] * x[j];
      }
      acc[d] += sq;
      for (std::size_t f = 0; f < features.size(); ++f) acc[d + 1 + f] += features[f](x);
    }
  });
  std::vector<double> total(width, 0.0);
  for (std::size_t c = 0; c < chunk_count(n); ++c)
    for (std::size_t j = 0; j < width; ++j) total[j] += partial[c * width + j];
  const double inv = 1.0 / static_cast<double>(n);
  MeasureSummary s;
  s.mean.resize(d);
  for (std::size_t j = 0; j < d; ++j) s.mean[j] = total[j] * inv;
  s.second_moment = total[d] * inv;
  s.features.resize(features.size());
  for (std::size_t f = 0; f < features.size(); ++f) s.features[f] = total[d + 1 + f] * inv;
  return s;
}

double moment(const EmpiricalMeasure& mu, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("moment order must be >= 1");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double norm = Eigen::Map<const Eigen::VectorXd>(mu.atom(i).data(), mu.dim()).norm();
    acc += mu.weights()(static_cast<Eigen::Index>(i)) * std::pow(norm, p);
  }
  return std::pow(acc, 1.0 / p);
}

namespace {

void check_order(double p) {
  if (p != 1.0 && p != 2.0) throw std::invalid_argument("wasserstein order must be 1 or 2");
}

double cost_power(double dist, double p) { return p == 1.0 ? dist : dist * dist; }

double wasserstein_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
  std::vector<double> xs(mu.points().data(), mu.points().data() + mu.size());
  std::vector<double> ys(nu.points().data(), nu.points().data() + nu.size());
  if (mu.equal_weights() && nu.equal_weights() && mu.size() == nu.size()) {
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += cost_power(std::abs(xs[i] - ys[i]), p);
    acc /= static_cast<double>(xs.size());
    return p == 1.0 ? acc : std::sqrt(acc);
  }
  // Integral of |F^-1(u) - G^-1(u)|^p over u, walking both quantile functions.
  auto sorted = [](const EmpiricalMeasure& m) {
    std::vector<std::pair<double, double>> v(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) v[i] = {m.atom(i)[0], m.weights()(static_cast<Eigen::Index>(i))};
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto a = sorted(mu);
  const auto b = sorted(nu);
  std::size_t i = 0, j = 0;
  double ra = a[0].second, rb = b[0].second, acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double mass = std::min(ra, rb);
    acc += mass * cost_power(std::abs(a[i].first - b[j].first), p);
    ra -= mass;
    rb -= mass;
    if (ra <= 1e-15) {
      if (++i < a.size()) ra = a[i].second;
    }
    if (rb <= 1e-15) {
      if (++j < b.size()) rb = b[j].second;
    }
  }
  return p == 1.0 ? acc : std::sqrt(acc);
}

}  // namespace

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  // Shortest augmenting path with potentials (Hungarian method), O(n^3).
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("assignment needs a square cost matrix");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return assignment;
}

double wasserstein_assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
  check_order(p);
  if (mu.dim() != nu.dim()) throw std::invalid_argument("wasserstein: dimension mismatch");
  if (mu.size() != nu.size() || !mu.equal_weights() || !nu.equal_weights())
    throw UnsupportedSizeError("wasserstein: the assignment route needs equal atom counts with equal weights");
  if (mu.size() > kMaxAssignmentSize)
    throw UnsupportedSizeError("wasserstein: assignment route limited to N <= 2048 atoms, got " +
                               std::to_string(mu.size()));
  const auto n = static_cast<Eigen::Index>(mu.size());
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      cost(i, j) = cost_power((mu.points().row(i) - nu.points().row(j)).norm(), p);
  const auto match = solve_assignment(cost);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) acc += cost(i, match[static_cast<std::size_t>(i)]);
  acc /= static_cast<double>(n);
  return p == 1.0 ? acc : std::sqrt(acc);
}

double wasserstein(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
  check_order(p);
  if (mu.dim() != nu.dim()) throw std::invalid_argument("wasserstein: dimension mismatch");
  if (mu.dim() == 1) return wasserstein_1d(mu, nu, p);
  return wasserstein_assignment(mu, nu, p);
}

double two_sample_w2_scale(const EmpiricalMeasure& mu) {
  const auto n = static_cast<Eigen::Index>(mu.size());
  if (n < 4) return 0.0;
  const Eigen::Index half = n / 2;
  StateMatrix even(half, mu.dim()), odd(half, mu.dim());
  for (Eigen::Index i = 0; i < half; ++i) {
    even.row(i) = mu.points().row(2 * i);
    odd.row(i) = mu.points().row(2 * i + 1);
  }
  auto a = EmpiricalMeasure::uniform(std::move(even));
  auto b = EmpiricalMeasure::uniform(std::move(odd));
  if (mu.dim() > 1 && half > static_cast<Eigen::Index>(kMaxAssignmentSize)) {
    // Fall back to coordinate-wise marginals, which bound the joint scale from below.
    double acc = 0.0;
    for (int j = 0; j < mu.dim(); ++j) {
      auto ma = EmpiricalMeasure::uniform(a.points().col(j));
      auto mb = EmpiricalMeasure::uniform(b.points().col(j));
      const double w = wasserstein(ma, mb, 2.0);
      acc += w * w;
    }
    return std::sqrt(acc) / std::sqrt(2.0);
  }
  return wasserstein(a, b, 2.0) / std::sqrt(2.0);
}

MeasureFlow MeasureFlow::stationary(std::shared_ptr<const EmpiricalMeasure> mu, MeasureSummary summary) {
  MeasureFlow f;
  f.append(0.0, std::move(summary), std::move(mu));
  f.stationary_ = true;
  return f;
}

void MeasureFlow::append(double t, MeasureSummary summary, std::shared_ptr<const EmpiricalMeasure> atoms) {
  if (!times_.empty()) {
    if (!(t > times_.back())) throw std::invalid_argument("measure flow grid must be strictly increasing");
    if (atoms && atoms_.back() && atoms->size() != atoms_.back()->size())
      throw std::invalid_argument("measure flow atom count must be constant across nodes");
  }
  times_.push_back(t);
  summaries_.push_back(std::move(summary));
  atoms_.push_back(std::move(atoms));
}

double MeasureFlow::horizon() const {
  if (stationary_) return std::numeric_limits<double>::infinity();
  return times_.empty() ? 0.0 : times_.back();
}

bool MeasureFlow::covers(double t) const {
  if (times_.empty()) return false;
  return stationary_ || t <= times_.back() + 1e-9 * std::max(1.0, std::abs(t));
}

std::size_t MeasureFlow::node_at(double t) const {
  if (times_.empty()) throw std::logic_error("empty measure flow");
  if (stationary_) return 0;
  const double tol = 1e-9 * std::max(1.0, std::abs(t));
  const auto it = std::upper_bound(times_.begin(), times_.end(), t + tol);
  if (it == times_.begin()) return 0;
  return static_cast<std::size_t>(it - times_.begin()) - 1;
}

const EmpiricalMeasure& MeasureFlow::atoms(std::size_t k) const {
  if (!atoms_.at(k)) throw std::logic_error("measure flow node was recorded without atoms");
  return *atoms_[k];
}

const EmpiricalMeasure& MeasureFlow::terminal() const { return atoms(times_.size() - 1); }

void write_measure_csv(std::ostream& os, const EmpiricalMeasure& mu) {
  CsvWriter w(os);
  std::vector<std::string> names;
  for (int j = 0; j < mu.dim(); ++j) names.push_back("x" + std::to_string(j));
  names.emplace_back("weight");
  w.header(names);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    w.fields(mu.atom(i)).field(mu.weights()(static_cast<Eigen::Index>(i))).end();
  }
}

EmpiricalMeasure read_measure_csv(std::istream& is) {
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() < 2) throw std::invalid_argument("measure CSV row needs coordinates and a weight");
    if (!rows.empty() && vals.size() != rows.front().size()) throw std::invalid_argument("ragged measure CSV");
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::invalid_argument("measure CSV has no atoms");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size() - 1);
  StateMatrix pts(n, d);
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) pts(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    w(i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
  }
  const double total = w.sum();
  if (std::abs(total - 1.0) < 1e-9) w /= total;
  return EmpiricalMeasure(std::move(pts), std::move(w));
}

void write_flow_csv(std::ostream& os, const MeasureFlow& flow) {
  CsvWriter w(os);
  if (flow.nodes() == 0) return;
  std::vector<std::string> names{"time"};
  const auto& s0 = flow.summary(0);
  for (std::size_t j = 0; j < s0.mean.size(); ++j) names.push_back("mean" + std::to_string(j));
  names.emplace_back("second_moment");
  for (std::size_t f = 0; f < s0.features.size(); ++f) names.push_back("feature" + std::to_string(f));
  w.header(names);
  for (std::size_t k = 0; k < flow.nodes(); ++k) {
    const auto& s = flow.summary(k);
    w.field(flow.times()[k]).fields(s.mean).field(s.second_moment).fields(s.features).end();
  }
}

InvariantEstimate invariant_measure(const ProblemSpec& spec, std::size_t n_particles, double dt, double t_burn,
                                    std::uint64_t seed) {
  const double rate = spec.nominal_rate();
  if (!(rate > 0.0)) throw std::invalid_argument("invariant_measure: spec has no positive contraction rate");
  if (t_burn < 10.0 / rate - 1e-12)
    throw std::invalid_argument("invariant_measure: burn-in must be at least 10 / rate = " +
                                format_double(10.0 / rate));
  std::vector<double> origin(static_cast<std::size_t>(spec.dim), 0.0);
  const auto theta = EmpiricalMeasure::dirac(origin);
  MvOptions opts;
  opts.keep_paths = false;
  opts.atom_times = {0.5 * t_burn, t_burn};
  const auto run = simulate_mv(spec, theta, dt, t_burn, n_particles, seed, opts);
  const auto& flow = run.flow;
  const std::size_t last = flow.nodes() - 1;
  const std::size_t mid = flow.node_at(0.5 * t_burn);

  InvariantEstimate est;
  est.mu_star = flow.atoms(last);
  est.summary = flow.summary(last);
  est.stationarity_w2 = wasserstein(flow.atoms(mid), est.mu_star, 2.0);
  est.tolerance = 3.0 * two_sample_w2_scale(est.mu_star) + 1e-12;
  if (est.stationarity_w2 > est.tolerance) {
    est.nonstationary = true;
    est.warning = "ensemble not stationary: W2(t/2, t) = " + format_double(est.stationarity_w2) +
                  " exceeds " + format_double(est.tolerance);
  }
  return est;
}

}  // namespace mvlab
