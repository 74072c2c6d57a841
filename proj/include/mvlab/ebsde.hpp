#pragma once

#include "mvlab/bsde.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mvlab {

struct AlphaSolution {
  double alpha = 0.0;
  double horizon = 0.0;           // truncation horizon T_alpha
  double truncation_bound = 0.0;  // (C / alpha) exp(-alpha T_alpha)
  double growth_constant = 0.0;
  std::vector<double> anchor;
  double u_at_anchor = 0.0;
  double u_stderr = 0.0;
  double lambda_candidate = 0.0;  // alpha u(anchor)
  RegressionFunction u_alpha;     // node-0 map x -> Y_0
  BsdeSolution solution;
};

struct AlphaOptions {
  int degree = 0;
  double spread = -1.0;      // negative: standard deviation of the stationary law
  double tol_trunc = 1e-3;
  double growth_constant = -1.0;  // negative: estimate with driver_growth_constant
  std::vector<double> anchor;     // empty: origin
};

// Truncated discounted BSDE with zero terminal value against a (stationary) flow.
AlphaSolution solve_alpha_bsde(const ProblemSpec& spec, const MeasureFlow& flow, double alpha, double dt,
                               std::size_t n_particles, std::uint64_t seed, const AlphaOptions& opts = {});

// T_alpha = (1 / alpha) ln(C / (alpha tol)), at least 1 / alpha.
double truncation_horizon(double alpha, double growth_constant, double tol_trunc);

struct AlphaTrace {
  double alpha = 0.0;
  double horizon = 0.0;
  double u_anchor = 0.0;
  double lambda_candidate = 0.0;
  double stderr_ = 0.0;
  double lambda_second_anchor = 0.0;
};

struct ErgodicOptions {
  std::size_t n_particles = 10000;
  std::size_t n_mu_star = 10000;
  double dt = 0.01;
  int degree = 0;
  std::vector<double> alphas{0.4, 0.2, 0.1, 0.05};
  double t_burn = -1.0;                // negative: 20 / nominal rate
  std::vector<double> second_anchor;   // empty: (1, 0, ..., 0)
};

struct ErgodicSolution {
  double lambda = 0.0;
  double lambda_stderr = 0.0;           // propagated through the extrapolation weights
  double lambda_second_anchor = 0.0;
  double self_consistency = 0.0;       // E_{mu*}[f(X, mu*, zeta(X))]
  RegressionFunction u_bar;            // normalized so u_bar(0) = 0
  RegressionFunction zeta_bar;
  EmpiricalMeasure mu_star;
  MeasureSummary mu_star_summary;
  InvariantEstimate invariant;
  std::vector<AlphaTrace> trace;
  bool unstable = false;
  std::string warning;

  double u_bar_at(State x) const { return u_bar.value(0, x); }
  std::vector<double> zeta_at(State x) const;
  MeasureFlow stationary_flow() const;
};

// Weighted least-squares line through (alpha, candidate) with the two smallest
// alphas counted twice; returns the intercept.
double extrapolate_lambda(std::span<const double> alphas, std::span<const double> candidates);
// Coefficients c with intercept = sum c_i candidate_i.
std::vector<double> extrapolation_weights(std::span<const double> alphas);

ErgodicSolution extract_ergodic(const ProblemSpec& spec, const ErgodicOptions& opts, std::uint64_t seed);

// Time average of the driver along the interacting system after a burn-in of
// 10 / rate. zeta may be null for z-free drivers.
double lambda_by_time_average(const ProblemSpec& spec, const RegressionFunction* zeta, double t_long, double dt,
                              std::size_t n_particles, std::uint64_t seed);

void write_alpha_trace_csv(std::ostream& os, const ErgodicSolution& sol);
void write_ergodic_report(std::ostream& os, const ErgodicSolution& sol);

}  // namespace mvlab
