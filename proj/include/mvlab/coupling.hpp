#pragma once

#include "mvlab/measure.hpp"
#include "mvlab/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvlab {

class AssumptionViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EllipticityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LyapunovConstants {
  double eta = 0.0;
  double m_b = 0.0;
  double ball_radius = 0.0;
  double kb_x = 0.0;
  double ks_x = 0.0;
  double sigma0 = 1.0;

  static LyapunovConstants from(const Constants& c);
  double a() const { return eta - ks_x; }
};

// kappa*(r) = (min(M_b, K^b_x r) + eta r) 1{r <= R} - (eta - K^sigma_x) r
double kappa_star(const LyapunovConstants& c, double r);

struct LyapunovTable {
  LyapunovConstants constants;
  std::vector<double> r;
  std::vector<double> phi;
  std::vector<double> dphi;
  std::vector<double> ddphi;

  std::size_t size() const { return r.size(); }
  double dphi0() const { return dphi.front(); }
  // exp((eta + 2 M_b / R) R^2 / (4 sigma0^2)) 2 sigma0^2 / (eta - K^sigma_x)
  double dphi0_bound() const;
};

// Phi' and Phi'' at a single radius.
struct LyapunovDerivatives {
  double dphi = 0.0;
  double ddphi = 0.0;
};
LyapunovDerivatives lyapunov_derivatives(const LyapunovConstants& c, double r);

LyapunovTable build_lyapunov(const LyapunovConstants& c, double r_max, std::size_t grid);

struct LyapunovCheck {
  double worst_margin = 0.0;    // max of 2 s0^2 Phi'' + kappa Phi' + 2 s0^2 r
  double worst_relative = 0.0;  // same, divided by the size of the terms
  double at_r = 0.0;
  bool margin_ok = false;
  bool signs_ok = false;        // Phi(0) = 0, Phi' >= 0, Phi'' <= 0, Phi nondecreasing
  bool envelope_ok = false;     // 2 s0^2 r / a <= Phi(r) <= Phi'(0) r and the Phi'(0) bound
  bool passed() const { return margin_ok && signs_ok && envelope_ok; }
};

// kappa_hat holds one value per table node.
LyapunovCheck verify_lyapunov_inequality(const LyapunovTable& table, std::span<const double> kappa_hat,
                                         double tol = 1e-6);
LyapunovCheck verify_lyapunov_inequality(const LyapunovTable& table, const std::function<double(double)>& kappa_hat,
                                         double tol = 1e-6);

// kappa(r) = sup over sampled pairs at distance r of <x-x', b(x)-b(x')>/r + |sbar(x)-sbar(x')|^2 / (2r).
std::vector<double> empirical_kappa(const ProblemSpec& spec, const MeasureSummary& mu, std::span<const double> radii,
                                    std::size_t pairs_per_radius, std::uint64_t seed);

void write_lyapunov_csv(std::ostream& os, const LyapunovTable& table);

// Lipschitz ramps with pi1^2 + pi2^2 = 1; pi1 = 1 for r >= delta, 0 for r <= delta / 2.
double mollifier_pi1(double r, double delta);
double mollifier_pi2(double r, double delta);

// Symmetric square root of sigma sigma^T - sigma0^2 I (row-major d x d in and out).
void sigma_bar(std::span<const double> sigma, int d, double sigma0, std::span<double> out);

struct CouplingOptions {
  std::size_t record_every = 10;
  double fit_start = -1.0;  // negative: 1 / nominal rate
};

struct CouplingRun {
  std::vector<double> times;
  StateMatrix radius;              // paths x recorded times
  std::vector<double> mean_r;
  std::vector<double> stderr_r;
  double delta = 0.0;
  double rate = 0.0;               // fitted decay rate of E[r_t]
  double intercept = 0.0;
  double fit_start = 0.0;
  std::size_t fitted_points = 0;
  bool monotone_after_transient = false;
  double worst_increase = 0.0;     // largest E[r] increase after the transient, in standard errors
  StateMatrix terminal;            // final states of the first leg
  StateMatrix terminal_prime;
};

CouplingRun simulate_reflection_coupling(const ProblemSpec& spec, const MeasureFlow& flow,
                                         const MeasureFlow& flow_prime, std::span<const double> x0,
                                         std::span<const double> x0_prime, double delta, double dt, double horizon,
                                         std::size_t n_paths, std::uint64_t seed, const CouplingOptions& opts = {});

void write_coupling_csv(std::ostream& os, const CouplingRun& run);

}  // namespace mvlab
