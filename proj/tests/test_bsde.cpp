#include <doctest.h>

#include "mvlab/bsde.hpp"
#include "mvlab/ebsde.hpp"
#include "mvlab/sde.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

using namespace mvlab;

namespace {

MeasureFlow flow_of(const ProblemSpec& spec, double x0, double horizon, double dt, std::size_t n = 4000,
                    std::uint64_t seed = 5) {
  MvOptions mo;
  mo.keep_paths = false;
  return simulate_mv(spec, EmpiricalMeasure::dirac(x0), dt, horizon, n, seed, mo).flow;
}

ProblemSpec brownian() { return scalar_spec("bm", [](double, double, const MeasureSummary&) { return 0.0; }, 1.0); }

const std::vector<double> kOrigin{0.0};

}  // namespace

TEST_CASE("basis sizes and derivatives") {
  BasisSpec b(2, 3);
  CHECK(b.size() == 10);
  std::vector<double> s{0.3, -1.2}, phi(b.size()), grad(b.size() * 2);
  b.eval(s, phi);
  b.gradient(s, grad);
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    auto sp = s, sm = s;
    sp[static_cast<std::size_t>(j)] += h;
    sm[static_cast<std::size_t>(j)] -= h;
    std::vector<double> pp(b.size()), pm(b.size());
    b.eval(sp, pp);
    b.eval(sm, pm);
    for (std::size_t p = 0; p < b.size(); ++p)
      CHECK(grad[p * 2 + static_cast<std::size_t>(j)] == doctest::Approx((pp[p] - pm[p]) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("OU second moment oracle") {
  auto spec = preset("ou-attract");
  spec.driver = [](State, const MeasureSummary&, std::span<const double>) { return 0.0; };
  spec.terminal = [](State x, const MeasureSummary&) { return x[0] * x[0]; };
  const auto flow = flow_of(spec, 0.0, 1.0, 0.01);
  const auto sol = solve_finite_bsde(spec, flow, kOrigin, 1.0, 0.01, 10000, 11);
  const double oracle = (1.0 - std::exp(-2.0)) / 2.0;
  CHECK(std::abs(sol.y0 - oracle) <= 0.02);
  const auto mc = plain_monte_carlo(spec, flow, kOrigin, 1.0, 0.01, 10000, 12);
  CHECK(std::abs(sol.y0 - mc.mean) <= 3.0 * std::hypot(sol.y0_stderr, mc.stderr_));
  CHECK(sol.y0_stderr > 0.0);
  CHECK_FALSE(sol.picard_warning);
}

TEST_CASE("constant driver integrates exactly") {
  auto spec = preset("ou-attract");
  spec.driver = [](State, const MeasureSummary&, std::span<const double>) { return 0.7; };
  spec.terminal = [](State, const MeasureSummary&) { return 0.0; };
  const auto flow = flow_of(spec, 0.0, 2.0, 0.02, 1000);
  const auto sol = solve_finite_bsde(spec, flow, kOrigin, 2.0, 0.02, 2000, 3);
  CHECK(std::abs(sol.y0 - 1.4) <= 1e-3);
}

TEST_CASE("linear z driver is a Girsanov shift") {
  auto spec = brownian();
  const double beta = 0.5;
  spec.driver = [=](State, const MeasureSummary&, std::span<const double> z) { return beta * z[0]; };
  spec.driver_depends_on_z = true;
  spec.terminal = [](State x, const MeasureSummary&) { return x[0]; };
  const auto flow = flow_of(spec, 0.0, 1.0, 0.01, 500);
  const auto sol = solve_finite_bsde(spec, flow, kOrigin, 1.0, 0.01, 10000, 21);
  CHECK(std::abs(sol.y0 - beta) <= 0.02);
}

TEST_CASE("gradient representation of Z") {
  auto spec = brownian();
  spec.terminal = [](State x, const MeasureSummary&) { return x[0]; };
  const auto flow = flow_of(spec, 0.0, 1.0, 0.01, 500);
  const auto sol = solve_finite_bsde(spec, flow, kOrigin, 1.0, 0.01, 5000, 4);
  for (double t : {0.0, 0.25, 0.5, 0.99})
    for (double x : {-1.0, 0.0, 1.5}) {
      const std::vector<double> xs{x};
      CHECK(z_from_gradient(sol, spec, flow, t, xs).z[0] == doctest::Approx(1.0).epsilon(0.05));
    }
  const std::vector<double> xs{0.0};
  const auto off = z_from_gradient(sol, spec, flow, 0.123456, xs);
  CHECK(off.off_grid);
  CHECK(off.node == 12);
}

TEST_CASE("symmetry forces a flat gradient at the origin") {
  auto spec = preset("ou-attract");
  spec.driver = [](State, const MeasureSummary&, std::span<const double>) { return 0.0; };
  spec.terminal = [](State x, const MeasureSummary&) { return x[0] * x[0]; };
  const auto flow = flow_of(spec, 0.0, 1.0, 0.01);
  const auto sol = solve_finite_bsde(spec, flow, kOrigin, 1.0, 0.01, 10000, 8);
  for (double t : {0.0, 0.5}) CHECK(std::abs(z_from_gradient(sol, spec, flow, t, kOrigin).z[0]) < 0.05);
}

TEST_CASE("two Z estimators agree on control-lq") {
  const auto spec = preset("control-lq");
  const auto flow = flow_of(spec, 0.0, 1.0, 0.01);
  const std::vector<double> x0{1.0};
  const auto sol = solve_finite_bsde(spec, flow, x0, 1.0, 0.01, 10000, 9);
  const double zg = z_from_gradient(sol, spec, flow, 0.0, x0).z[0];
  const double zr = sol.z0[0];
  CHECK(std::abs(zg - zr) <= 0.05 * (1.0 + std::abs(zr)));
}

TEST_CASE("comparison principle") {
  auto spec = preset("ou-attract");
  spec.terminal = [](State x, const MeasureSummary&) { return x[0] * x[0]; };
  auto upper = spec;
  upper.driver = [](State x, const MeasureSummary&, std::span<const double>) { return x[0] * x[0] + 0.05 * std::cos(x[0]) + 0.05; };
  const auto flow = flow_of(spec, 0.0, 1.0, 0.01);
  const auto lo = solve_finite_bsde(spec, flow, kOrigin, 1.0, 0.01, 5000, 13);
  const auto hi = solve_finite_bsde(upper, flow, kOrigin, 1.0, 0.01, 5000, 14);
  CHECK(hi.y0 >= lo.y0 - 3.0 * std::hypot(lo.y0_stderr, hi.y0_stderr));
}

TEST_CASE("halving dt stays inside the error band") {
  auto spec = preset("ou-attract");
  spec.driver = [](State, const MeasureSummary&, std::span<const double>) { return 0.0; };
  spec.terminal = [](State x, const MeasureSummary&) { return x[0] * x[0]; };
  const auto flow = flow_of(spec, 0.0, 1.0, 0.01);
  const auto coarse = solve_finite_bsde(spec, flow, kOrigin, 1.0, 0.02, 10000, 15);
  const auto fine = solve_finite_bsde(spec, flow, kOrigin, 1.0, 0.01, 10000, 16);
  CHECK(std::abs(coarse.y0 - fine.y0) <= 3.0 * std::hypot(coarse.y0_stderr, fine.y0_stderr));
}

TEST_CASE("Picard iterates settle on a Lipschitz driver") {
  const auto spec = preset("control-lq");
  const auto flow = flow_of(spec, 0.0, 1.0, 0.01);
  BsdeOptions opts;
  opts.picard = 4;
  const std::vector<double> x0{1.0};
  const auto sol = solve_finite_bsde(spec, flow, x0, 1.0, 0.01, 4000, 17, opts);
  REQUIRE(sol.picard_history.size() >= 2);
  CHECK_FALSE(sol.picard_warning);
  CHECK(sol.picard_history.back() < sol.picard_history.front());
}

TEST_CASE("growth constant is stable across starting points") {
  auto spec = preset("ou-attract");
  spec.driver = [](State, const MeasureSummary&, std::span<const double>) { return 0.0; };
  spec.terminal = [](State x, const MeasureSummary&) { return x[0] * x[0]; };
  const auto flow = flow_of(spec, 0.0, 1.0, 0.01);
  std::vector<double> c;
  for (double x : {0.0, 1.0, 2.0}) {
    const std::vector<double> x0{x};
    const auto sol = solve_finite_bsde(spec, flow, x0, 1.0, 0.01, 4000, 18);
    c.push_back(std::abs(sol.y0) / (1.0 + x * x + flow.summary(0).second_moment));
  }
  const double hi = *std::max_element(c.begin(), c.end()), lo = *std::min_element(c.begin(), c.end());
  CHECK(hi <= 3.0 * lo);
}

TEST_CASE("degenerate regression is named") {
  auto spec = preset("ou-attract");
  const auto flow = flow_of(spec, 0.0, 0.1, 0.05, 100);
  BsdeOptions opts;
  opts.degree = 14;
  try {
    solve_finite_bsde(spec, flow, kOrigin, 0.1, 0.05, 8, 1, opts);
    FAIL("expected a basis degeneracy error");
  } catch (const BasisDegeneracyError& e) {
    CHECK(e.condition > 1e12);
    CHECK(std::string(e.what()).find("node") != std::string::npos);
  }
}

TEST_CASE("preconditions") {
  auto spec = preset("ou-attract");
  const auto flow = flow_of(spec, 0.0, 1.0, 0.1, 100);
  CHECK_THROWS_AS(solve_finite_bsde(spec, flow, kOrigin, 2.0, 0.1, 100, 1), CoverageError);
  BsdeOptions opts;
  opts.degree = 1;
  CHECK_THROWS_AS(solve_finite_bsde(spec, flow, kOrigin, 1.0, 0.1, 100, 1, opts), std::invalid_argument);
}

TEST_CASE("reports and coefficient export") {
  auto spec = preset("ou-attract");
  const auto flow = flow_of(spec, 0.0, 0.2, 0.05, 200);
  const auto sol = solve_finite_bsde(spec, flow, kOrigin, 0.2, 0.05, 500, 2);
  std::ostringstream r, c;
  write_bsde_report(r, sol);
  CHECK(r.str().find("y0=") != std::string::npos);
  CHECK(r.str().find("z0_0=") != std::string::npos);
  write_regression_csv(c, sol.u);
  const auto text = c.str();
  CHECK(text.rfind("# dim=1", 0) == 0);
  CHECK(text.find("\nnode,time,output,center0,scale0,c_0") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(sol.u.nodes()) + 2);
}

TEST_CASE("recentering keeps the function") {
  RegressionFunction f(BasisSpec(2, 3), 2, {0.0});
  auto& n = f.node(0);
  n.center = Eigen::Vector2d(0.4, -0.3);
  n.scale = Eigen::Vector2d(0.7, 1.3);
  n.coef = Eigen::MatrixXd::Random(10, 2);
  const std::vector<std::vector<double>> pts{{0.0, 0.0}, {1.0, -2.0}, {-0.5, 0.25}};
  std::vector<std::array<double, 2>> before;
  for (const auto& x : pts) {
    std::array<double, 2> v{};
    f.eval(0, x, v);
    before.push_back(v);
  }
  const std::vector<double> origin{0.0, 0.0};
  f.recenter(0, origin);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::array<double, 2> v{};
    f.eval(0, pts[i], v);
    CHECK(v[0] == doctest::Approx(before[i][0]).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(before[i][1]).epsilon(1e-12));
  }
  f.shift(0, 0, -f.value(0, origin));
  CHECK(f.value(0, origin) == 0.0);
}
