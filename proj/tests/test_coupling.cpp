#include <doctest.h>

#include "mvlab/coupling.hpp"
#include "mvlab/sde.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

using namespace mvlab;

namespace {

LyapunovConstants strong(double a) {
  LyapunovConstants c;
  c.eta = a;
  c.sigma0 = 1.0;
  return c;
}

}  // namespace

TEST_CASE("strong regime closed form") {
  for (double a : {0.5, 1.0, 2.0}) {
    const auto t = build_lyapunov(strong(a), 5.0, 200);
    for (std::size_t j = 0; j < t.size(); ++j) CHECK(std::abs(t.phi[j] - 2.0 * t.r[j] / a) < 1e-8);
  }
}

TEST_CASE("kappa star shape") {
  const auto c = LyapunovConstants::from(preset("sine-weak").constants);
  CHECK(kappa_star(c, 0.0) == 0.0);
  CHECK(kappa_star(c, 2.0) == doctest::Approx(5.0));
  CHECK(kappa_star(c, 6.0) == doctest::Approx(15.0));
  CHECK(kappa_star(c, 6.5) == doctest::Approx(-3.25));
}

TEST_CASE("sine-weak table satisfies the differential inequality") {
  const auto c = LyapunovConstants::from(preset("sine-weak").constants);
  const auto t = build_lyapunov(c, 12.0, 1000);
  const auto check = verify_lyapunov_inequality(t, [&](double r) { return kappa_star(c, r); });
  CHECK(check.passed());
  CHECK(t.dphi0() <= t.dphi0_bound());
  for (std::size_t j = 0; j < t.size(); ++j) {
    CHECK(t.dphi[j] >= 0.0);
    CHECK(t.phi[j] >= 2.0 * t.r[j] / c.a() * (1.0 - 1e-12));
  }
}

TEST_CASE("second derivative agrees with differences of the first") {
  const auto c = LyapunovConstants::from(preset("sine-weak").constants);
  for (double r : {0.5, 2.0, 5.0, 5.9}) {
    const double h = 1e-5;
    const double fd = (lyapunov_derivatives(c, r + h).dphi - lyapunov_derivatives(c, r - h).dphi) / (2.0 * h);
    const double exact = lyapunov_derivatives(c, r).ddphi;
    CHECK(fd == doctest::Approx(exact).epsilon(1e-6));
  }
}

TEST_CASE("margin responds to perturbed kappa") {
  const auto c = LyapunovConstants::from(preset("sine-weak").constants);
  const auto t = build_lyapunov(c, 12.0, 300);
  const auto base = verify_lyapunov_inequality(t, [&](double r) { return kappa_star(c, r); });
  const auto lower = verify_lyapunov_inequality(t, [&](double r) { return kappa_star(c, r) - 1.0; });
  const auto higher = verify_lyapunov_inequality(
      t, [&](double r) { return kappa_star(c, r) + (r <= c.ball_radius ? 10.0 : 0.0); });
  CHECK(lower.worst_margin < base.worst_margin);
  CHECK(higher.worst_margin > 0.0);
  CHECK_FALSE(higher.margin_ok);
}

TEST_CASE("empirical kappa stays below kappa star") {
  const auto spec = preset("sine-weak");
  const auto c = LyapunovConstants::from(spec.constants);
  const auto t = build_lyapunov(c, 12.0, 200);
  const auto k = empirical_kappa(spec, MeasureSummary{{0.0}, 1.0, {0.0}}, t.r, 200, 3);
  for (std::size_t j = 0; j < t.size(); ++j) CHECK(k[j] <= kappa_star(c, t.r[j]) + 1e-12);
  CHECK(verify_lyapunov_inequality(t, k).passed());
}

TEST_CASE("build rejects violated assumptions") {
  LyapunovConstants c = strong(1.0);
  c.ks_x = 1.0;
  CHECK_THROWS_AS(build_lyapunov(c, 5.0, 10), AssumptionViolation);
}

TEST_CASE("mollifiers") {
  const double delta = 0.06;
  double lip = 0.0;
  double prev1 = mollifier_pi1(0.0, delta), prev2 = mollifier_pi2(0.0, delta);
  const double h = 1e-6;
  for (int i = 1; i <= 100000; ++i) {
    const double r = i * h;
    const double p1 = mollifier_pi1(r, delta), p2 = mollifier_pi2(r, delta);
    CHECK(std::abs(p1 * p1 + p2 * p2 - 1.0) <= 1e-14);
    lip = std::max({lip, std::abs(p1 - prev1) / h, std::abs(p2 - prev2) / h});
    prev1 = p1;
    prev2 = p2;
  }
  CHECK(lip <= std::numbers::pi / delta + 1e-6);
  CHECK(mollifier_pi1(delta, delta) == 1.0);
  CHECK(mollifier_pi1(delta / 2, delta) == 0.0);
}

TEST_CASE("coupled copies from the same point never separate") {
  const auto spec = preset("sine-weak");
  const auto flow = MeasureFlow::stationary(nullptr, MeasureSummary{{0.0}, 1.0, {0.0}});
  const double x0 = 0.3;
  const auto run = simulate_reflection_coupling(spec, flow, flow, std::span<const double>(&x0, 1),
                                                std::span<const double>(&x0, 1), 0.06, 0.01, 2.0, 50, 1);
  CHECK((run.radius.array() == 0.0).all());
}

TEST_CASE("reflection coupling on ou-attract contracts") {
  const auto spec = preset("ou-attract");
  const auto flow = MeasureFlow::stationary(nullptr, MeasureSummary{{0.0}, 0.5, {}});
  const double x0 = 0.0, x1 = 2.0;
  const auto run = simulate_reflection_coupling(spec, flow, flow, std::span<const double>(&x0, 1),
                                                std::span<const double>(&x1, 1), 0.01, 0.01, 3.0, 1000, 4);
  CHECK(run.rate >= 0.5 * spec.nominal_rate());
  CHECK((run.radius.array() >= 0.0).all());
}

TEST_CASE("ellipticity is checked") {
  auto spec = preset("ou-attract");
  spec.constants.sigma0 = 2.0;
  const auto flow = MeasureFlow::stationary(nullptr, MeasureSummary{{0.0}, 0.5, {}});
  const double x0 = 0.0, x1 = 1.0;
  CHECK_THROWS_AS(simulate_reflection_coupling(spec, flow, flow, std::span<const double>(&x0, 1),
                                               std::span<const double>(&x1, 1), 0.01, 0.01, 0.1, 4, 1),
                  EllipticityError);
}

TEST_CASE("lyapunov csv echoes constants") {
  const auto t = build_lyapunov(strong(1.0), 1.0, 3);
  std::ostringstream os;
  write_lyapunov_csv(os, t);
  CHECK(os.str().rfind("# eta=1", 0) == 0);
}
