#include "properties.hpp"

#include "mvlab/bsde.hpp"
#include "mvlab/control.hpp"
#include "mvlab/coupling.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

namespace mvlab::props {

namespace {

EmpiricalMeasure cloud(std::mt19937_64& gen, int dim, std::size_t n, double shift) {
  std::normal_distribution<double> z(0.0, 1.0);
  StateMatrix pts(static_cast<Eigen::Index>(n), dim);
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (int j = 0; j < dim; ++j) pts(i, j) = shift + (j + 1) * z(gen);
  return EmpiricalMeasure::uniform(pts);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// sup of the p-th moment over [0, T] against 1.5x the running max on [0, 5/rate]
bool moments_stay_bounded(const ProblemSpec& spec, double x0, double& ratio, double head = 0.0) {
  const double rate = spec.nominal_rate();
  const double horizon = 50.0 / rate, early = std::max(5.0 / rate, head);
  MvOptions mo;
  mo.keep_paths = false;
  for (int k = 0; k <= 250; ++k) mo.atom_times.push_back(horizon * k / 250.0);
  const auto run = simulate_mv(spec, EmpiricalMeasure::dirac(x0), 0.02, horizon, 1000, 31, mo);
  const auto& flow = run.flow;
  bool ok = true;
  ratio = 0.0;
  for (double p : {2.0, 4.0}) {
    double head = 0.0, sup = 0.0;
    for (std::size_t k = 0; k < flow.nodes(); ++k) {
      if (!flow.has_atoms(k)) continue;
      const double m = std::pow(moment(flow.atoms(k), p), p);
      if (flow.times()[k] <= early) head = std::max(head, m);
      sup = std::max(sup, m);
    }
    if (head > 0.0) ratio = std::max(ratio, sup / head);
    ok = ok && sup <= 1.5 * head;
  }
  return ok;
}

}  // namespace

Outcome metric_axioms() {
  std::mt19937_64 gen(11);
  double worst = 0.0;
  bool ok = true;
  for (int dim : {1, 2}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto a = cloud(gen, dim, 64, 0.0), b = cloud(gen, dim, 64, 0.5), c = cloud(gen, dim, 64, -0.3);
      for (double p : {1.0, 2.0}) {
        const double ab = wasserstein(a, b, p), ba = wasserstein(b, a, p), ac = wasserstein(a, c, p),
                     cb = wasserstein(c, b, p), aa = wasserstein(a, a, p);
        worst = std::max({worst, std::abs(ab - ba), aa, std::max(0.0, ab - ac - cb)});
        ok = ok && ab > 0.0;
      }
    }
  }
  ok = ok && worst <= 1e-10;
  return {"measure metric axioms", ok, "worst violation " + fmt(worst)};
}

Outcome w1_below_w2() {
  std::mt19937_64 gen(12);
  std::size_t bad = 0;
  for (int dim : {1, 2, 3})
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = cloud(gen, dim, 48, 0.0), b = cloud(gen, dim, 48, 0.2 * trial);
      if (wasserstein(a, b, 1.0) > wasserstein(a, b, 2.0) + 1e-12) ++bad;
    }
  return {"W1 <= W2", bad == 0, std::to_string(bad) + " violations in 60 pairs"};
}

Outcome quantile_matches_assignment() {
  std::mt19937_64 gen(13);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = cloud(gen, 1, 200, 0.0), b = cloud(gen, 1, 200, 0.1 * trial);
    for (double p : {1.0, 2.0}) worst = std::max(worst, std::abs(wasserstein(a, b, p) - wasserstein_assignment(a, b, p)));
  }
  return {"1D quantile coupling equals assignment", worst <= 1e-10, "max difference " + fmt(worst)};
}

Outcome thread_determinism() {
  const auto spec = preset("sine-weak");
  std::vector<StateMatrix> finals;
  std::vector<double> y0s;
  const unsigned before = thread_count();
  for (unsigned th : {1u, 2u, 3u}) {
    set_thread_count(th);
    MvOptions mo;
    mo.keep_paths = false;
    const auto run = simulate_mv(spec, EmpiricalMeasure::dirac(0.5), 0.01, 1.0, 7000, 21, mo);
    finals.push_back(run.final_state.states);
    auto bs = preset("ou-attract");
    bs.terminal = [](State x, const MeasureSummary&) { return x[0] * x[0]; };
    y0s.push_back(solve_finite_bsde(bs, run.flow, std::vector<double>{0.0}, 0.5, 0.05, 5000, 3).y0);
  }
  set_thread_count(before);
  bool ok = true;
  for (std::size_t i = 1; i < finals.size(); ++i) ok = ok && finals[i] == finals[0] && y0s[i] == y0s[0];
  return {"thread-count determinism", ok, ok ? "bit-identical for 1, 2, 3 threads" : "outputs differ"};
}

Outcome mollifier_identity() {
  const double delta = 0.06;
  double worst = 0.0, lip = 0.0;
  const double h = 1e-6;
  double p1 = mollifier_pi1(0.0, delta), p2 = mollifier_pi2(0.0, delta);
  for (int i = 1; i <= 200000; ++i) {
    const double r = i * h;
    const double q1 = mollifier_pi1(r, delta), q2 = mollifier_pi2(r, delta);
    worst = std::max(worst, std::abs(q1 * q1 + q2 * q2 - 1.0));
    lip = std::max({lip, std::abs(q1 - p1) / h, std::abs(q2 - p2) / h});
    p1 = q1;
    p2 = q2;
  }
  const bool ok = worst <= 1e-14 && lip <= std::numbers::pi / delta + 1e-6;
  return {"mollifier identity", ok, "max |pi1^2+pi2^2-1| " + fmt(worst) + ", Lipschitz " + fmt(lip)};
}

Outcome moment_bounds() {
  bool ok = true;
  std::string detail;
  for (const auto& name : preset_names()) {
    const auto spec = preset(name);
    for (double x0 : {0.0, 2.0}) {
      double ratio = 0.0;
      const bool pass = moments_stay_bounded(spec, x0, ratio);
      ok = ok && pass;
      detail += name + "@" + fmt(x0) + ":" + fmt(ratio) + " ";
    }
  }
  return {"moment boundedness sweep", ok, "sup/head " + detail};
}

Outcome shifted_moment_bounds() {
  using Shift = std::function<double(double, double)>;
  const std::vector<std::pair<std::string, Shift>> shifts{
      {"0.5", [](double, double) { return 0.5; }},
      {"-0.5", [](double, double) { return -0.5; }},
      {"0.5sin(x)", [](double, double x) { return 0.5 * std::sin(x); }},
      {"0.5tanh(3x)", [](double, double x) { return 0.5 * std::tanh(3.0 * x); }}};
  bool ok = true;
  std::string detail;
  for (const auto& [label, beta] : shifts) {
    auto spec = preset("ou-attract");
    auto base = spec.drift;
    spec.drift = [base, beta](double t, State x, const MeasureSummary& mu, std::span<double> out) {
      base(t, x, mu, out);
      out[0] += beta(t, x[0]);
    };
    for (double x0 : {0.0, 2.0}) {
      double ratio = 0.0;
      ok = moments_stay_bounded(spec, x0, ratio) && ok;
      detail += label + "@" + fmt(x0) + ":" + fmt(ratio) + " ";
    }
  }
  return {"shifted-drift moment boundedness", ok, "sup/head " + detail};
}

Outcome periodic_shift_moment_bounds() {
  auto spec = preset("ou-attract");
  auto base = spec.drift;
  spec.drift = [base](double t, State x, const MeasureSummary& mu, std::span<double> out) {
    base(t, x, mu, out);
    out[0] += 0.5 * std::sin(x[0] + t);
  };
  // head window spans one forcing period
  bool ok = true;
  std::string detail;
  for (double x0 : {0.0, 2.0}) {
    double ratio = 0.0;
    ok = moments_stay_bounded(spec, x0, ratio, 2.0 * std::numbers::pi) && ok;
    detail += fmt(ratio) + " ";
  }
  return {"periodic-shift moment boundedness", ok, "sup/head " + detail};
}

Outcome girsanov_matches_direct() {
  const auto spec = preset("control-lq");
  MvOptions mo;
  mo.keep_paths = false;
  const auto flow = simulate_mv(spec, EmpiricalMeasure::dirac(0.0), 0.01, 1.0, 2000, 41, mo).flow;
  const std::vector<double> x0{1.0};
  bool ok = true;
  std::string detail;
  for (double a : {0.1, 0.2, -0.2}) {
    const auto policy = ControlPolicy::constant_action({a});
    const auto direct = evaluate_cost_finite(spec, policy, x0, flow, 1.0, 0.01, 10000, 42);
    const auto weighted = evaluate_cost_girsanov(spec, policy, x0, flow, 1.0, 0.01, 10000, 43);
    const double err = std::hypot(direct.stderr_, weighted.stderr_);
    const double gap = std::abs(direct.estimate - weighted.estimate);
    ok = ok && gap <= 3.0 * err;
    detail += "a=" + fmt(a) + " gap " + fmt(gap) + "/" + fmt(3.0 * err) + " ";
  }
  return {"Girsanov vs direct cost", ok, detail};
}

std::vector<Outcome> all() {
  return {metric_axioms(),      w1_below_w2(),    quantile_matches_assignment(), thread_determinism(),
          mollifier_identity(), moment_bounds(), shifted_moment_bounds(), periodic_shift_moment_bounds(),       girsanov_matches_direct()};
}

}  // namespace mvlab::props
