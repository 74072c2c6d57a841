#pragma once

#include "mvlab/bsde.hpp"
#include "mvlab/ebsde.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mvlab {

enum class DecayModel { kInverse, kExponential };
const char* to_string(DecayModel m);

struct DecayFit {
  DecayModel model = DecayModel::kExponential;
  std::vector<double> horizons;
  std::vector<double> observed;  // raw per-T quantity (v_T, gap, |Y/T - lambda|)
  std::vector<double> residual;  // what the model is fitted to
  std::vector<double> noise;     // per-T solver standard error
  std::vector<double> fitted;
  std::vector<bool> trusted;

  double c = 0.0, c_ci = 0.0;
  double ell = 0.0, ell_ci = 0.0;
  double rate = 0.0, rate_ci = 0.0;
  double r2 = 0.0;
  double noise_floor = 0.0;
  bool rate_indeterminate = false;
  bool refit = false;  // ell refitted as a free parameter
  std::string note;

  bool strictly_decreasing() const;
};

// residual = C / T, least squares through the origin.
DecayFit fit_inverse(std::span<const double> horizons, std::span<const double> residual);
// log residual = log C - rate T over the points flagged trusted.
DecayFit fit_exponential(std::span<const double> horizons, std::span<const double> residual,
                         const std::vector<bool>& trusted);
// v = ell + C exp(-rate T) by Levenberg-Marquardt from a starting guess.
void refit_with_ell(DecayFit& fit, std::span<const double> observed);

struct LtbOptions {
  std::size_t n_particles = 10000;
  double dt = 0.01;
  int degree = 0;
  std::size_t picard = 1;
  std::uint64_t seed = 42;
  std::size_t noise_seeds = 3;
};

// Particle approximation of the law flow started at theta, with atoms kept at t = 0.
MeasureFlow theta_flow(const ProblemSpec& spec, const EmpiricalMeasure& theta, double dt, double horizon,
                       std::size_t n_particles, std::uint64_t seed);

struct Ltb1Result {
  DecayFit fit;
  std::vector<double> y0;
  double envelope = 0.0;  // Chat (1 + |x0|^{q+1} + |theta|^{q+1})
  bool envelope_ok = false;
};

Ltb1Result ltb1_experiment(const ProblemSpec& spec, std::span<const double> x0, const MeasureFlow& flow,
                           std::span<const double> horizons, double lambda, const LtbOptions& opts = {});

struct Ltb2Result {
  DecayFit fit;
  std::vector<double> y0;
  double u_bar_x0 = 0.0;
  std::vector<double> ell_samples;  // v at the largest T for the noise seeds
};

// v_T = Y_0^T - lambda T - u_bar(x0).
Ltb2Result ltb2_experiment(const ProblemSpec& spec, std::span<const double> x0, const MeasureFlow& flow,
                           std::span<const double> horizons, const ErgodicSolution& ergodic,
                           const LtbOptions& opts = {});

struct Ltb3Result {
  DecayFit gradient;  // |grad u^T(0, x0) - grad u_bar(x0)|
  DecayFit z;         // |Z_0^T - Zbar_0|
  std::vector<std::vector<double>> z_t;
  std::vector<double> z_bar;
};

Ltb3Result ltb3_experiment(const ProblemSpec& spec, std::span<const double> x0, const MeasureFlow& flow,
                           std::span<const double> horizons, const ErgodicSolution& ergodic,
                           const LtbOptions& opts = {});

// grad u_bar(x0) sigma(x0, mu).
std::vector<double> corrector_z(const ProblemSpec& spec, const ErgodicSolution& ergodic, const MeasureSummary& mu,
                                std::span<const double> x0);

// Spec whose terminal condition is the ergodic corrector u_bar.
ProblemSpec with_corrector_terminal(const ProblemSpec& spec, const ErgodicSolution& ergodic);

void write_decay_csv(std::ostream& os, const DecayFit& fit);
void write_decay_report(std::ostream& os, const DecayFit& fit, const std::string& prefix = "");

}  // namespace mvlab
