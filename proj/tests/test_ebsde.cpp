#include <doctest.h>

#include "mvlab/ebsde.hpp"
#include "mvlab/sde.hpp"

#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

using namespace mvlab;

namespace {

MeasureFlow ou_stationary(const ProblemSpec& spec, std::size_t n = 2000) {
  auto inv = invariant_measure(spec, n, 0.02, 20.0, 77);
  return MeasureFlow::stationary(std::make_shared<const EmpiricalMeasure>(inv.mu_star), inv.summary);
}

ProblemSpec constant_driver(double c) {
  auto spec = preset("ou-attract");
  spec.driver = [=](State, const MeasureSummary&, std::span<const double>) { return c; };
  return spec;
}

}  // namespace

TEST_CASE("truncation horizon") {
  const double t = truncation_horizon(0.2, 1.0, 1e-3);
  CHECK(t == doctest::Approx(std::log(1.0 / (0.2 * 1e-3)) / 0.2));
  CHECK(truncation_horizon(0.5, 1e-6, 1e-3) == doctest::Approx(2.0));
}

TEST_CASE("discounted constant driver") {
  const double c = 0.8, alpha = 0.4;
  const auto spec = constant_driver(c);
  const auto flow = ou_stationary(spec, 500);
  const auto a = solve_alpha_bsde(spec, flow, alpha, 0.05, 500, 3);
  const double oracle = c / alpha * (1.0 - std::exp(-alpha * a.horizon));
  CHECK(std::abs(a.u_at_anchor - oracle) <= 1e-3 * c / alpha);
  CHECK(a.lambda_candidate == doctest::Approx(alpha * a.u_at_anchor));
  CHECK(a.truncation_bound <= 1e-3 * 1.0001);
}

TEST_CASE("discounted quadratic driver approaches the ergodic constant") {
  const auto spec = preset("ou-attract");
  const auto flow = ou_stationary(spec, 5000);
  const auto a = solve_alpha_bsde(spec, flow, 0.1, 0.02, 5000, 9);
  CHECK(std::abs(a.lambda_candidate - 0.5) <= 0.05);
  CHECK(a.u_stderr > 0.0);
  // u_alpha(x) - u_alpha(0) should look like x^2 / 2 near the origin
  const std::vector<double> one{1.0}, zero{0.0};
  const double bump = a.u_alpha.value(0, one) - a.u_alpha.value(0, zero);
  CHECK(std::abs(bump - 0.5) <= 0.1);
}

TEST_CASE("extrapolation weights") {
  const std::vector<double> alphas{0.4, 0.2, 0.1, 0.05};
  const auto w = extrapolation_weights(alphas);
  REQUIRE(w.size() == 4);
  CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> linear;
  for (double a : alphas) linear.push_back(0.3 - 2.0 * a);
  CHECK(extrapolate_lambda(alphas, linear) == doctest::Approx(0.3).epsilon(1e-12));
  std::vector<double> curved;
  for (double a : alphas) curved.push_back(1.0 / (2.0 + a));
  const double lam = extrapolate_lambda(alphas, curved);
  CHECK(lam < 0.5);
  CHECK(lam > 0.495);
  const std::vector<double> single{0.3}, cand{0.7};
  CHECK(extrapolate_lambda(single, cand) == doctest::Approx(0.7));
}

TEST_CASE("small ergodic extraction is normalized") {
  const auto spec = preset("ou-attract");
  ErgodicOptions eo;
  eo.n_particles = 1000;
  eo.n_mu_star = 1000;
  eo.dt = 0.05;
  eo.alphas = {0.4, 0.2};
  const auto erg = extract_ergodic(spec, eo, 5);
  const std::vector<double> zero{0.0};
  CHECK(erg.u_bar_at(zero) == 0.0);
  CHECK(erg.trace.size() == 2);
  CHECK(std::isfinite(erg.lambda));
  CHECK(erg.lambda_stderr > 0.0);
  CHECK(std::abs(erg.lambda - 0.5) < 0.15);
  CHECK(erg.stationary_flow().is_stationary());
  std::ostringstream csv, rep;
  write_alpha_trace_csv(csv, erg);
  CHECK(csv.str().rfind("alpha,horizon,u_anchor,lambda_candidate,stderr,lambda_second_anchor\n", 0) == 0);
  write_ergodic_report(rep, erg);
  CHECK(rep.str().find("u_bar_at_origin=0") != std::string::npos);
}

TEST_CASE("alpha sequence validation") {
  const auto spec = preset("ou-attract");
  ErgodicOptions eo;
  eo.n_particles = 100;
  eo.n_mu_star = 100;
  eo.alphas = {0.2, 0.4};
  CHECK_THROWS_AS(extract_ergodic(spec, eo, 1), std::invalid_argument);
  eo.alphas = {};
  CHECK_THROWS_AS(extract_ergodic(spec, eo, 1), std::invalid_argument);
  eo.alphas = {0.0};
  CHECK_THROWS_AS(extract_ergodic(spec, eo, 1), std::invalid_argument);
  eo.alphas = {1.5};
  CHECK_THROWS_AS(extract_ergodic(spec, eo, 1), std::invalid_argument);
}

TEST_CASE("step budget") {
  const auto spec = preset("ou-attract");
  const auto flow = ou_stationary(spec, 200);
  CHECK_THROWS_AS(solve_alpha_bsde(spec, flow, 1e-6, 0.01, 100, 1), BudgetError);
}

TEST_CASE("lambda from a long time average") {
  const auto spec = preset("ou-attract");
  const double lam = lambda_by_time_average(spec, nullptr, 40.0, 0.01, 2000, 3);
  CHECK(std::abs(lam - 0.5) <= 0.02);
  CHECK(lambda_by_time_average(constant_driver(0.37), nullptr, 40.0, 0.05, 50, 3) == doctest::Approx(0.37).epsilon(1e-12));
  CHECK_THROWS_AS(lambda_by_time_average(spec, nullptr, 5.0, 0.01, 100, 3), std::invalid_argument);
}
