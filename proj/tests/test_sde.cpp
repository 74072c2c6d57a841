#include <doctest.h>

#include "mvlab/parallel.hpp"
#include "mvlab/sde.hpp"

#include <cmath>
#include <sstream>

using namespace mvlab;

namespace {

double column_mean(const StateMatrix& m) { return m.col(0).mean(); }
double column_var(const StateMatrix& m) {
  const double mu = column_mean(m);
  return (m.col(0).array() - mu).square().mean();
}

}  // namespace

TEST_CASE("frozen dynamics stay put") {
  const auto spec = scalar_spec("frozen", [](double, double, const MeasureSummary&) { return 0.0; }, 0.0);
  const auto run = simulate_mv(spec, EmpiricalMeasure::dirac(2.5), 0.1, 1.0, 16, 1);
  for (const auto& s : run.paths.states) CHECK((s.array() == 2.5).all());
}

TEST_CASE("ou-attract mean and variance") {
  const auto spec = preset("ou-attract");
  MvOptions opts;
  opts.keep_paths = false;
  const auto from_one = simulate_mv(spec, EmpiricalMeasure::dirac(1.0), 0.01, 1.0, 10000, 3, opts);
  CHECK(std::abs(column_mean(from_one.final_state.states) - std::exp(-1.5)) < 0.02);
  const auto from_zero = simulate_mv(spec, EmpiricalMeasure::dirac(0.0), 0.01, 2.0, 10000, 4, opts);
  CHECK(std::abs(column_var(from_zero.final_state.states) - (1.0 - std::exp(-4.0)) / 2.0) < 0.03);
}

TEST_CASE("blow-up is reported with the step") {
  const auto spec = scalar_spec("explode", [](double, double x, const MeasureSummary&) { return x * x * x; }, 0.0);
  try {
    simulate_mv(spec, EmpiricalMeasure::dirac(10.0), 0.5, 20.0, 4, 1);
    FAIL("expected a blow-up");
  } catch (const BlowUpError& e) {
    CHECK(e.step < 40);
  }
}

TEST_CASE("decoupled linear ODE") {
  const auto spec = scalar_spec("ode", [](double, double x, const MeasureSummary&) { return -x; }, 0.0);
  const auto run = simulate_mv(spec, EmpiricalMeasure::dirac(1.0), 0.001, 2.0, 4, 1);
  const double x0 = 1.0;
  const auto p = simulate_decoupled(spec, std::span<const double>(&x0, 1), 4, run.flow, nullptr, 0.001, 2.0, 1);
  CHECK(p.terminal()(0, 0) == doctest::Approx(std::exp(-2.0)).epsilon(2e-3));
}

TEST_CASE("decoupled marginal matches the particle system") {
  const auto spec = preset("ou-attract");
  const auto theta = EmpiricalMeasure::dirac(1.0);
  MvOptions opts;
  opts.keep_paths = false;
  opts.keep_all_atoms = true;
  const auto run = simulate_mv(spec, theta, 0.01, 1.0, 2000, 5, opts);
  const auto p = simulate_decoupled(spec, run.flow.atoms(0).points(), run.flow, nullptr, 0.01, 1.0, 5);
  const auto a = EmpiricalMeasure::uniform(p.terminal());
  const double w = wasserstein(a, run.flow.terminal(), 2.0);
  CHECK(w <= 2.0 * two_sample_w2_scale(run.flow.terminal()));
}

TEST_CASE("constant shift drifts a Brownian motion") {
  const auto spec = scalar_spec("bm", [](double, double, const MeasureSummary&) { return 0.0; }, 2.0);
  MeasureFlow flow = MeasureFlow::stationary(nullptr, MeasureSummary{{0.0}, 0.0, {}});
  const auto shift = DriftShift::constant({0.3});
  const double x0 = 0.0;
  const auto p = simulate_decoupled(spec, std::span<const double>(&x0, 1), 20000, flow, &shift, 0.01, 2.0, 9);
  const double se = 2.0 * std::sqrt(2.0) / std::sqrt(20000.0);
  CHECK(std::abs(column_mean(p.terminal()) - 2.0 * 0.3 * 2.0) < 3.0 * se);
}

TEST_CASE("coverage and grid checks") {
  const auto spec = preset("ou-attract");
  const auto run = simulate_mv(spec, EmpiricalMeasure::dirac(0.0), 0.1, 1.0, 8, 1);
  const double x0 = 0.0;
  CHECK_THROWS_AS(simulate_decoupled(spec, std::span<const double>(&x0, 1), 4, run.flow, nullptr, 0.1, 2.0, 1),
                  CoverageError);
  CHECK_THROWS_AS(simulate_decoupled(spec, std::span<const double>(&x0, 1), 4, run.flow, nullptr, 0.03, 0.9, 1),
                  std::invalid_argument);
}

TEST_CASE("flow property") {
  const auto spec = preset("ou-attract");
  const auto r = flow_property_check(spec, EmpiricalMeasure::dirac(1.0), 1.0, 2.0, 0.01, 2000, 7);
  CHECK(r.discrepancy <= 3.0 * r.mc_scale);
  const auto end = flow_property_check(spec, EmpiricalMeasure::dirac(1.0), 2.0, 2.0, 0.01, 500, 7);
  CHECK(end.discrepancy < 1e-12);
  auto ode = scalar_spec("ode", [](double, double x, const MeasureSummary& mu) { return -x + 0.2 * mu.mean[0]; }, 0.0);
  const auto det = flow_property_check(ode, EmpiricalMeasure::dirac(1.0), 0.5, 1.0, 0.01, 50, 7);
  CHECK(det.discrepancy < 0.01);
}

TEST_CASE("synchronous contraction on ou-attract") {
  const auto spec = preset("ou-attract");
  const auto r = contraction_rate(spec, EmpiricalMeasure::dirac(0.0), EmpiricalMeasure::dirac(1.0), 0.01, 2.0, 4000, 2);
  for (std::size_t i = 0; i < r.times.size(); ++i)
    CHECK(r.distances[i] == doctest::Approx(std::exp(-1.5 * r.times[i])).epsilon(0.05));
  CHECK(r.rate == doctest::Approx(1.5).epsilon(0.05));
  const auto same = contraction_rate(spec, EmpiricalMeasure::dirac(1.0), EmpiricalMeasure::dirac(1.0), 0.01, 1.0, 100, 2);
  for (double w : same.distances) CHECK(w == 0.0);
  CHECK(same.truncated);
}

TEST_CASE("ou-repel contracts at least at the nominal rate") {
  const auto spec = preset("ou-repel");
  const auto r = contraction_rate(spec, EmpiricalMeasure::dirac(0.0), EmpiricalMeasure::dirac(1.0), 0.01, 4.0, 2000, 2);
  CHECK(r.rate >= 0.45);
}

TEST_CASE("paths are independent of the thread count") {
  const auto spec = preset("sine-weak");
  set_thread_count(1);
  const auto a = simulate_mv(spec, EmpiricalMeasure::dirac(0.5), 0.01, 0.5, 5000, 21);
  set_thread_count(4);
  const auto b = simulate_mv(spec, EmpiricalMeasure::dirac(0.5), 0.01, 0.5, 5000, 21);
  set_thread_count(0);
  REQUIRE(a.paths.states.size() == b.paths.states.size());
  for (std::size_t k = 0; k < a.paths.states.size(); ++k) CHECK(a.paths.states[k] == b.paths.states[k]);
}

TEST_CASE("path csv export") {
  const auto spec = preset("ou-attract");
  const auto run = simulate_mv(spec, EmpiricalMeasure::dirac(0.0), 0.5, 1.0, 2, 1);
  std::ostringstream os;
  write_paths_csv(os, run.paths);
  const auto text = os.str();
  CHECK(text.rfind("step,time,particle,x0\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3 * 2);
}
