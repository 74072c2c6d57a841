#include "mvlab/model.hpp"

#include "mvlab/csv.hpp"
#include "mvlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace mvlab {

const char* to_string(Regime r) {
  return r == Regime::kStrongDissipative ? "strong-dissipative" : "weak-dissipative";
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "pass";
    case Verdict::kFail: return "fail";
    default: return "indeterminate";
  }
}

bool ControlSet::contains(std::span<const double> a, double tol) const {
  if (a.size() != lo.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i] >= lo[i] - tol && a[i] <= hi[i] + tol)) return false;
  return true;
}

double ControlSet::reach() const {
  // |R a| is convex in a, so its maximum over the box sits at a vertex.
  const int k = dim();
  double best = 0.0;
  Eigen::VectorXd a(k);
  for (long mask = 0; mask < (1L << k); ++mask) {
    for (int i = 0; i < k; ++i) a(i) = (mask >> i) & 1 ? hi[static_cast<std::size_t>(i)] : lo[static_cast<std::size_t>(i)];
    best = std::max(best, (r * a).norm());
  }
  return best;
}

double ProblemSpec::nominal_rate() const {
  if (regime == Regime::kStrongDissipative) return constants.nu - (constants.ks_x + constants.ks_law);
  return constants.eta - constants.ks_x;
}

void ProblemSpec::validate() const {
  if (dim <= 0) throw std::invalid_argument(name + ": dimension must be positive");
  if (!drift || !diffusion) throw std::invalid_argument(name + ": drift and diffusion are required");
  const auto& c = constants;
  for (double v : {c.nu, c.eta, c.kb_x, c.kb_law, c.ks_x, c.ks_law, c.sigma0, c.ball_radius, c.m_b, c.growth_q,
                   c.holder_eps, c.interaction})
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument(name + ": constants must be finite and nonnegative");
  if (!(c.holder_eps > 0.0 && c.holder_eps <= 1.0)) throw std::invalid_argument(name + ": epsilon must lie in (0, 1]");
  if (regime == Regime::kStrongDissipative && !(c.nu > c.ks_x + c.ks_law))
    throw std::invalid_argument(name + ": strong regime needs nu > K^sigma_x + K^sigma_law");
  if (regime == Regime::kWeakDissipative && diffusion_depends_on_measure)
    throw std::invalid_argument(name + ": weak regime needs a measure-free diffusion");
  if (control) {
    const auto& a = *control;
    if (a.lo.size() != a.hi.size() || a.r.rows() != dim || a.r.cols() != a.dim())
      throw std::invalid_argument(name + ": control set shape mismatch");
    for (std::size_t i = 0; i < a.lo.size(); ++i)
      if (!(a.lo[i] <= a.hi[i])) throw std::invalid_argument(name + ": control box has lo > hi");
  }
}

ProblemSpec scalar_spec(std::string name, std::function<double(double, double, const MeasureSummary&)> b,
                        double sigma) {
  ProblemSpec s;
  s.name = std::move(name);
  s.dim = 1;
  s.drift = [b = std::move(b)](double t, State x, const MeasureSummary& mu, std::span<double> out) {
    out[0] = b(t, x[0], mu);
  };
  s.diffusion = [sigma](State, const MeasureSummary&, std::span<double> out) { out[0] = sigma; };
  s.driver = [](State, const MeasureSummary&, std::span<const double>) { return 0.0; };
  s.terminal = [](State, const MeasureSummary&) { return 0.0; };
  s.constants.sigma0 = std::abs(sigma);
  return s;
}

namespace {

ProblemSpec ou(const std::string& name, double sign) {
  const double eta = 1.0, kappa = 0.5, sigma = 1.0;
  auto s = scalar_spec(name, [=](double, double x, const MeasureSummary& mu) { return -eta * x + sign * kappa * mu.mean[0]; },
                       sigma);
  s.constants.nu = sign < 0 ? eta : eta - kappa;
  s.constants.eta = eta;
  s.constants.kb_x = eta;
  s.constants.kb_law = kappa;
  s.constants.sigma0 = sigma;
  s.constants.growth_q = 1.0;
  s.constants.interaction = kappa;
  s.driver = [](State x, const MeasureSummary&, std::span<const double>) { return x[0] * x[0]; };
  return s;
}

ProblemSpec sine_weak() {
  const double kappa = 0.05, radius = 6.0;
  auto s = scalar_spec("sine-weak",
                       [=](double, double x, const MeasureSummary& mu) {
                         return -x + 1.5 * std::sin(x) + kappa * mu.features[0];
                       },
                       1.0);
  s.features = {[](State x) { return std::tanh(x[0]); }};
  s.regime = Regime::kWeakDissipative;
  auto& c = s.constants;
  c.eta = 1.0 - 3.0 / radius;
  c.kb_x = 2.5;
  c.kb_law = kappa;
  c.ball_radius = radius;
  c.m_b = c.kb_x * radius;
  c.growth_q = 1.0;
  c.interaction = kappa;
  s.driver = [](State x, const MeasureSummary&, std::span<const double>) { return x[0] * x[0]; };
  return s;
}

ProblemSpec control_lq() {
  auto s = ou("control-lq", -1.0);
  ControlSet a;
  a.lo = {-1.0};
  a.hi = {1.0};
  a.r = Eigen::MatrixXd::Ones(1, 1);
  a.quadratic = true;
  a.state_cost = [](State x, const MeasureSummary&) { return x[0] * x[0]; };
  s.control = a;
  s.running_cost = [](State x, const MeasureSummary&, std::span<const double> u) { return x[0] * x[0] + u[0] * u[0]; };
  s.terminal = [](State x, const MeasureSummary&) { return x[0] * x[0]; };
  s.driver = hamiltonian_driver(s);
  s.driver_depends_on_z = true;
  return s;
}

}  // namespace

std::vector<std::string> preset_names() { return {"ou-attract", "ou-repel", "sine-weak", "control-lq"}; }

ProblemSpec preset(const std::string& name) {
  if (name == "ou-attract") return ou(name, -1.0);
  if (name == "ou-repel") return ou(name, 1.0);
  if (name == "sine-weak") return sine_weak();
  if (name == "control-lq") return control_lq();
  throw UnknownPresetError("unknown preset '" + name + "'");
}

const AssumptionCheck& AuditReport::check(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return c;
  throw std::out_of_range("no audit check named " + name);
}

bool AuditReport::passed() const {
  return std::none_of(checks.begin(), checks.end(), [](const auto& c) { return c.verdict == Verdict::kFail; });
}

namespace {

constexpr std::size_t kCloudSize = 64;
constexpr std::size_t kMaxWitnesses = 8;
constexpr double kCheckTol = 1e-10;

class Sampler {
 public:
  Sampler(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {}

  std::vector<double> gaussian(std::uint64_t i, std::uint64_t slot, double scale, double shift = 0.0) {
    std::vector<double> v(static_cast<std::size_t>(dim_));
    gaussian_block({seed_, Stream::kAudit, i, slot}, v);
    for (auto& x : v) x = shift + scale * x;
    return v;
  }
  double unit(std::uint64_t i, std::uint64_t slot) { return uniform({seed_, Stream::kAudit, i, slot}); }

  // Small Gaussian cloud with random centre and spread.
  EmpiricalMeasure cloud(std::uint64_t i, std::uint64_t slot) {
    const double centre = 2.0 * gaussian(i, slot, 1.0)[0];
    const double spread = 0.2 + 2.8 * unit(i, slot + 1);
    StateMatrix pts(static_cast<Eigen::Index>(kCloudSize), dim_);
    std::vector<double> z(kCloudSize * static_cast<std::size_t>(dim_));
    gaussian_block({seed_, Stream::kAudit, i, slot + 2}, z);
    for (Eigen::Index a = 0; a < pts.rows(); ++a)
      for (Eigen::Index j = 0; j < dim_; ++j)
        pts(a, j) = centre + spread * z[static_cast<std::size_t>(a * dim_ + j)];
    return EmpiricalMeasure::uniform(std::move(pts));
  }

 private:
  std::uint64_t seed_;
  int dim_;
};

// Tracks the worst quotient against an upper bound.
class Tracker {
 public:
  Tracker(std::string name, double threshold) {
    check_.name = std::move(name);
    check_.threshold = threshold;
    check_.measured = -std::numeric_limits<double>::infinity();
  }
  void add(std::span<const double> x, std::span<const double> xp, double q) {
    if (!std::isfinite(q)) return;
    ++count_;
    if (q > check_.measured) {
      check_.measured = q;
      worst_ = Witness{{x.begin(), x.end()}, {xp.begin(), xp.end()}, q};
    }
    if (q > check_.threshold + kCheckTol * (1.0 + std::abs(check_.threshold)) && check_.witnesses.size() < kMaxWitnesses)
      check_.witnesses.push_back(Witness{{x.begin(), x.end()}, {xp.begin(), xp.end()}, q});
  }
  AssumptionCheck finish(bool applicable) {
    if (!applicable || count_ == 0) {
      check_.verdict = Verdict::kIndeterminate;
      if (count_ == 0) check_.measured = 0.0;
    } else {
      check_.verdict = check_.witnesses.empty() ? Verdict::kPass : Verdict::kFail;
    }
    if (check_.verdict != Verdict::kFail) check_.witnesses.clear();
    if (check_.verdict == Verdict::kFail && check_.witnesses.empty()) check_.witnesses.push_back(worst_);
    return check_;
  }

 private:
  AssumptionCheck check_;
  Witness worst_;
  std::size_t count_ = 0;
};

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double dist2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double min_eigen_gap(const ProblemSpec& spec, std::span<const double> sigma) {
  const int d = spec.dim;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> s(sigma.data(), d, d);
  const Eigen::MatrixXd a = s * s.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  return es.eigenvalues().minCoeff() - spec.constants.sigma0 * spec.constants.sigma0;
}

}  // namespace

double driver_growth_constant(const ProblemSpec& spec, std::size_t n_samples, std::uint64_t seed) {
  if (!spec.driver) return 0.0;
  Sampler s(seed ^ 0x9e3779b97f4a7c15ULL, spec.dim);
  const double q1 = spec.constants.growth_q + 1.0;
  std::vector<double> zero(static_cast<std::size_t>(spec.dim), 0.0);
  double best = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto x = s.gaussian(i, 0, 3.0);
    const auto mu = s.cloud(i, 10);
    const double env = 1.0 + std::pow(std::sqrt(dot(x, x)), q1) + std::pow(moment(mu, 2.0 * q1), q1);
    best = std::max(best, std::abs(spec.driver(x, spec.summarize(mu), zero)) / env);
  }
  return best;
}

AuditReport audit(const ProblemSpec& spec, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw std::invalid_argument("audit needs at least two samples");
  const int d = spec.dim;
  const auto& c = spec.constants;
  const bool strong = spec.regime == Regime::kStrongDissipative;
  const auto du = static_cast<std::size_t>(d);
  Sampler s(seed, d);

  Tracker l_diss("l-dissipativity", -c.nu);
  Tracker p_diss("pointwise-dissipativity", -c.eta);
  Tracker weak("weak-dissipativity", -c.eta);
  Tracker b_x("drift-lipschitz-x", c.kb_x);
  Tracker b_law("drift-lipschitz-law", c.kb_law);
  Tracker s_x("diffusion-lipschitz-x", c.ks_x);
  Tracker s_law("diffusion-lipschitz-law", c.ks_law);
  Tracker free_sigma("distribution-free-sigma", 0.0);
  Tracker ellip("ellipticity", 0.0);

  std::vector<double> bx(du), bxp(du), sx(du * du), sxp(du * du);
  std::vector<double> origin(du, 0.0);
  const double radius = c.ball_radius;

  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto mu = s.cloud(i, 0);
    const auto mup = s.cloud(i, 10);
    const auto smu = spec.summarize(mu);
    const auto smup = spec.summarize(mup);
    const auto x = s.gaussian(i, 20, 5.0);
    const auto xp = s.gaussian(i, 21, 5.0);
    const double t = 0.0;

    // Pairs of clouds coupled atom by atom.
    {
      double num = 0.0, den = 0.0;
      for (std::size_t a = 0; a < kCloudSize; ++a) {
        const auto u = mu.atom(a);
        const auto up = mup.atom(a);
        spec.drift(t, u, smu, bx);
        spec.drift(t, up, smup, bxp);
        for (std::size_t j = 0; j < du; ++j) {
          num += (u[j] - up[j]) * (bx[j] - bxp[j]);
          den += (u[j] - up[j]) * (u[j] - up[j]);
        }
      }
      const auto m = mu.mean();
      const auto mp = mup.mean();
      if (den > 0.0) l_diss.add({m.data(), du}, {mp.data(), du}, num / den);
    }

    const double r2 = dist2(x, xp);
    if (r2 > 0.0) {
      spec.drift(t, x, smu, bx);
      spec.drift(t, xp, smu, bxp);
      double inner = 0.0, gap = 0.0;
      for (std::size_t j = 0; j < du; ++j) {
        inner += (x[j] - xp[j]) * (bx[j] - bxp[j]);
        gap += (bx[j] - bxp[j]) * (bx[j] - bxp[j]);
      }
      p_diss.add(x, xp, inner / r2);
      b_x.add(x, xp, std::sqrt(gap / r2));
      spec.diffusion(x, smu, sx);
      spec.diffusion(xp, smu, sxp);
      s_x.add(x, xp, 0.5 * dist2(sx, sxp) / r2);
      ellip.add(x, x, -min_eigen_gap(spec, sx));
    }

    // Weak regime: pairs further apart than the ball radius, biased towards the boundary.
    {
      const auto dir = s.gaussian(i, 30, 1.0);
      const double norm = std::sqrt(dot(dir, dir));
      const double u = s.unit(i, 31);
      const double r = std::max(radius, 1e-3) * (1.0 + 1e-9) + std::max(radius, 1.0) * 2.0 * u * u;
      std::vector<double> y = s.gaussian(i, 32, std::max(2.0 * radius, 5.0));
      std::vector<double> yp(du);
      for (std::size_t j = 0; j < du; ++j) yp[j] = y[j] + r * dir[j] / norm;
      spec.drift(t, y, smu, bx);
      spec.drift(t, yp, smu, bxp);
      double inner = 0.0;
      for (std::size_t j = 0; j < du; ++j) inner += (y[j] - yp[j]) * (bx[j] - bxp[j]);
      weak.add(y, yp, inner / (r * r));
    }

    // Measure arguments at a fixed state.
    {
      const double w1 = wasserstein(mu, mup, 1.0);
      const double w2 = wasserstein(mu, mup, 2.0);
      spec.drift(t, x, smu, bx);
      spec.drift(t, x, smup, bxp);
      const auto m = mu.mean();
      const auto mp = mup.mean();
      if (w1 > 0.0) b_law.add({m.data(), du}, {mp.data(), du}, std::sqrt(dist2(bx, bxp)) / w1);
      spec.diffusion(x, smu, sx);
      spec.diffusion(x, smup, sxp);
      if (w2 > 0.0) s_law.add({m.data(), du}, {mp.data(), du}, 0.5 * dist2(sx, sxp) / (w2 * w2));
      free_sigma.add({m.data(), du}, {mp.data(), du}, std::sqrt(dist2(sx, sxp)));
    }
  }

  AuditReport rep;
  rep.spec_name = spec.name;
  rep.checks.push_back(l_diss.finish(strong));
  rep.checks.push_back(p_diss.finish(strong));
  rep.checks.push_back(weak.finish(!strong));
  rep.checks.push_back(b_x.finish(true));
  rep.checks.push_back(b_law.finish(true));
  rep.checks.push_back(s_x.finish(true));
  rep.checks.push_back(s_law.finish(strong));
  rep.checks.push_back(free_sigma.finish(!strong));
  rep.checks.push_back(ellip.finish(true));

  rep.lambda = c.nu - (c.ks_x + c.ks_law);
  rep.weak_rate = -rep.check("weak-dissipativity").measured;
  if (!strong && radius > 0.0 && c.sigma0 > 0.0)
    rep.interaction_bound = (c.eta - c.ks_x) *
                         std::exp(-(c.eta + 2.0 * c.m_b / radius) * radius * radius / (2.0 * c.sigma0 * c.sigma0));
  rep.driver_growth = driver_growth_constant(spec, n_samples, seed);
  if (spec.terminal) {
    const double q1 = c.growth_q + 1.0;
    Sampler g(seed ^ 0x51ed27ULL, d);
    for (std::size_t i = 0; i < n_samples; ++i) {
      const auto x = g.gaussian(i, 0, 3.0);
      const auto mu = g.cloud(i, 10);
      const double env = 1.0 + std::pow(std::sqrt(dot(x, x)), q1) + std::pow(moment(mu, 2.0 * q1), q1);
      rep.terminal_growth = std::max(rep.terminal_growth, std::abs(spec.terminal(x, spec.summarize(mu))) / env);
    }
  }
  return rep;
}

void write_audit_csv(std::ostream& os, const AuditReport& report) {
  CsvWriter w(os);
  w.comment("spec=" + report.spec_name + " lambda=" + format_double(report.lambda) +
            " weak_rate=" + format_double(report.weak_rate) + " interaction_bound=" + format_double(report.interaction_bound) +
            " driver_growth=" + format_double(report.driver_growth) +
            " terminal_growth=" + format_double(report.terminal_growth));
  w.header({"check", "verdict", "measured", "threshold", "witnesses"});
  for (const auto& c : report.checks)
    w.field(c.name).field(to_string(c.verdict)).field(c.measured).field(c.threshold).field(c.witnesses.size()).end();
}

}  // namespace mvlab
