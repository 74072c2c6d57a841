#include <doctest.h>

#include "mvlab/ltb.hpp"
#include "mvlab/sde.hpp"

#include <cmath>
#include <sstream>

using namespace mvlab;

namespace {

RegressionFunction flat(int dim, int outputs) {
  RegressionFunction f(BasisSpec(dim, 2), outputs, {0.0});
  auto& n = f.node(0);
  n.center = Eigen::VectorXd::Zero(dim);
  n.scale = Eigen::VectorXd::Ones(dim);
  n.coef = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(f.basis().size()), outputs);
  n.lo = Eigen::VectorXd::Constant(dim, -10.0);
  n.hi = Eigen::VectorXd::Constant(dim, 10.0);
  return f;
}

}  // namespace

TEST_CASE("inverse fit recovers C") {
  const std::vector<double> t{5, 10, 20};
  std::vector<double> r;
  for (double h : t) r.push_back(0.3 / h);
  const auto fit = fit_inverse(t, r);
  CHECK(fit.model == DecayModel::kInverse);
  CHECK(fit.c == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(fit.c_ci < 1e-10);
  CHECK(fit.r2 == doctest::Approx(1.0));
}

TEST_CASE("exponential fit recovers rate and prefactor") {
  const std::vector<double> t{1, 2, 3, 4};
  std::vector<double> r;
  for (double h : t) r.push_back(2.0 * std::exp(-0.7 * h));
  auto fit = fit_exponential(t, r, std::vector<bool>(4, true));
  CHECK(fit.rate == doctest::Approx(0.7).epsilon(1e-10));
  CHECK(fit.c == doctest::Approx(2.0).epsilon(1e-10));
  CHECK_FALSE(fit.rate_indeterminate);
  CHECK(fit.strictly_decreasing());

  // a junk point that is not trusted does not move the fit
  r[3] = 5.0;
  fit = fit_exponential(t, r, {true, true, true, false});
  CHECK(fit.rate == doctest::Approx(0.7).epsilon(1e-10));
  CHECK_FALSE(fit.strictly_decreasing());

  fit = fit_exponential(t, r, {true, false, false, false});
  CHECK(fit.rate_indeterminate);
  CHECK(std::isinf(fit.rate_ci));
}

TEST_CASE("free offset refit") {
  const std::vector<double> t{0.5, 1, 1.5, 2, 3, 4};
  std::vector<double> v;
  for (double h : t) v.push_back(0.25 + 0.4 * std::exp(-1.3 * h));
  std::vector<double> r;
  for (double x : v) r.push_back(std::abs(x - v.back()));
  auto fit = fit_exponential(t, r, {true, true, true, true, true, false});
  fit.ell = v.back();
  refit_with_ell(fit, v);
  CHECK(fit.refit);
  CHECK(fit.ell == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(fit.c == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(fit.rate == doctest::Approx(1.3).epsilon(1e-6));

  DecayFit small = fit_exponential(std::vector<double>{1, 2, 3}, std::vector<double>{0.3, 0.2, 0.1},
                                   std::vector<bool>(3, true));
  refit_with_ell(small, std::vector<double>{0.3, 0.2, 0.1});
  CHECK_FALSE(small.refit);
  CHECK(small.note.find("too few") != std::string::npos);
}

TEST_CASE("grid validation") {
  const std::vector<double> bad{2, 1}, r{0.1, 0.2};
  CHECK_THROWS_AS(fit_inverse(bad, r), std::invalid_argument);
}

TEST_CASE("constant driver has no LTB1 residual") {
  auto spec = preset("ou-attract");
  spec.driver = [](State, const MeasureSummary&, std::span<const double>) { return 0.6; };
  spec.terminal = [](State, const MeasureSummary&) { return 0.0; };
  const auto flow = theta_flow(spec, EmpiricalMeasure::dirac(0.0), 0.05, 4.0, 300, 1);
  CHECK(flow.has_atoms(0));
  LtbOptions lo;
  lo.n_particles = 300;
  lo.dt = 0.05;
  const std::vector<double> t{1, 2, 4}, x0{0.5};
  const auto r = ltb1_experiment(spec, x0, flow, t, 0.6, lo);
  for (double v : r.fit.residual) CHECK(v < 1e-7);  // ridge
  CHECK(r.envelope_ok);
}

TEST_CASE("symmetric problem has a flat gradient gap at the origin") {
  auto spec = preset("ou-attract");
  spec.terminal = [](State x, const MeasureSummary&) { return x[0] * x[0]; };
  ErgodicSolution erg;
  erg.u_bar = flat(1, 1);
  erg.zeta_bar = flat(1, 1);
  erg.lambda = 0.5;
  const auto flow = theta_flow(spec, EmpiricalMeasure::dirac(0.0), 0.02, 2.0, 2000, 2);
  LtbOptions lo;
  lo.n_particles = 4000;
  lo.dt = 0.02;
  lo.noise_seeds = 2;
  const std::vector<double> t{1, 2}, x0{0.0};
  const auto r = ltb3_experiment(spec, x0, flow, t, erg, lo);
  for (double g : r.gradient.observed) CHECK(g < 0.05);
  CHECK(r.z_bar[0] == 0.0);
  CHECK(r.z_t.size() == 2);
  std::ostringstream csv, rep;
  write_decay_csv(csv, r.gradient);
  CHECK(csv.str().rfind("T,observed,residual,fitted,noise,trusted\n", 0) == 0);
  write_decay_report(rep, r.gradient, "grad_");
  CHECK(rep.str().find("grad_model=exponential") != std::string::npos);
}

TEST_CASE("corrector terminal") {
  auto spec = preset("ou-attract");
  ErgodicSolution erg;
  erg.u_bar = flat(1, 1);
  erg.u_bar.node(0).coef(2, 0) = 0.5;  // x^2 / 2
  const auto s = with_corrector_terminal(spec, erg);
  const std::vector<double> x{2.0};
  CHECK(s.terminal(x, MeasureSummary{}) == doctest::Approx(2.0));
  MeasureSummary mu;
  mu.mean = {0.0};
  const auto z = corrector_z(spec, erg, mu, x);
  CHECK(z[0] == doctest::Approx(2.0));
}
