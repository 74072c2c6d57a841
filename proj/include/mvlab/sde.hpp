#pragma once

#include "mvlab/measure.hpp"
#include "mvlab/model.hpp"
#include "mvlab/rng.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvlab {

class BlowUpError : public std::runtime_error {
 public:
  BlowUpError(std::size_t step, double time, std::size_t particle);
  std::size_t step;
  double time;
  std::size_t particle;
};

class CoverageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Ensemble {
  double time = 0.0;
  StateMatrix states;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;  // index of the next Brownian increment to draw

  std::size_t size() const { return static_cast<std::size_t>(states.rows()); }
  EmpiricalMeasure measure() const { return EmpiricalMeasure::uniform(states); }
};

struct PathBundle {
  std::vector<double> times;
  std::vector<std::size_t> steps;    // Euler step index of each stored node
  std::vector<StateMatrix> states;   // one N x d block per stored node
  std::uint64_t seed = 0;
  Stream stream = Stream::kBrownian;

  std::size_t particles() const { return states.empty() ? 0 : static_cast<std::size_t>(states.front().rows()); }
  const StateMatrix& terminal() const { return states.back(); }
};

void write_paths_csv(std::ostream& os, const PathBundle& paths);

// Bounded drift shift beta(t, x, mu) entering dX = b dt + sigma (beta dt + dW).
struct DriftShift {
  std::function<void(double t, State x, const MeasureSummary& mu, std::span<double> out)> beta;
  double bound = 0.0;

  static DriftShift constant(std::vector<double> c);
};

// Uniform Euler grid with M = round(T / dt) steps covering [t0, t0 + T].
struct TimeGrid {
  double t0 = 0.0;
  double dt = 0.0;
  std::size_t steps = 0;

  static TimeGrid make(double dt, double horizon, double t0 = 0.0);
  double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
  double end() const { return time(steps); }
};

// Scratch buffers for one Euler-Maruyama step of one particle.
class EulerStepper {
 public:
  explicit EulerStepper(const ProblemSpec& spec);

  // x <- x + (b + sigma beta) dt + sigma sqrt(dt) xi, where xi holds d standard normals.
  void step(double t, std::span<double> x, const MeasureSummary& mu, double dt, std::span<const double> xi,
            const DriftShift* shift = nullptr);
  // Same, with an extra drift term sigma R a (controlled dynamics).
  void step_controlled(double t, std::span<double> x, const MeasureSummary& mu, double dt,
                       std::span<const double> xi, std::span<const double> ra);

  std::span<const double> last_sigma() const { return sigma_; }
  void sigma(State x, const MeasureSummary& mu, std::span<double> out) const { spec_.diffusion(x, mu, out); }

 private:
  const ProblemSpec& spec_;
  int d_;
  std::vector<double> drift_;
  std::vector<double> sigma_;
  std::vector<double> shift_;
};

// One Euler step of every row of x against a fixed summary, drawing noise at
// (seed, stream, row, step). Throws BlowUpError on a non-finite state.
void euler_step_ensemble(const ProblemSpec& spec, StateMatrix& x, const MeasureSummary& mu, double t, double dt,
                         std::uint64_t seed, Stream stream, std::uint64_t step, const DriftShift* shift = nullptr);

struct MvOptions {
  bool keep_paths = true;
  std::size_t record_every = 1;     // path storage stride in Euler steps
  bool keep_all_atoms = false;      // store every flow node's atoms
  std::vector<double> atom_times;   // otherwise store atoms only at these times
  Stream stream = Stream::kBrownian;
};

struct MvRun {
  PathBundle paths;
  MeasureFlow flow;
  Ensemble final_state;
};

// Interacting particle Euler-Maruyama scheme with the empirical measure of
// the ensemble standing in for the law. Initial states are drawn from theta.
MvRun simulate_mv(const ProblemSpec& spec, const EmpiricalMeasure& theta, double dt, double horizon,
                  std::size_t n_particles, std::uint64_t seed, const MvOptions& opts = {});

struct DecoupledOptions {
  double t0 = 0.0;
  std::size_t record_every = 1;
  Stream stream = Stream::kDecoupled;
  bool keep_paths = true;  // otherwise only the initial and terminal nodes are stored
};

// dX = b(t, X, mu_t) dt + sigma(X, mu_t)(beta dt + dW) against a frozen flow.
PathBundle simulate_decoupled(const ProblemSpec& spec, const StateMatrix& x0, const MeasureFlow& flow,
                              const DriftShift* shift, double dt, double horizon, std::uint64_t seed,
                              const DecoupledOptions& opts = {});
// Every particle starts from the same point x0.
PathBundle simulate_decoupled(const ProblemSpec& spec, std::span<const double> x0, std::size_t n_particles,
                              const MeasureFlow& flow, const DriftShift* shift, double dt, double horizon,
                              std::uint64_t seed, const DecoupledOptions& opts = {});

struct FlowPropertyResult {
  double discrepancy = 0.0;  // W2 between restarted and straight-through marginals
  double mc_scale = 0.0;     // two-sample W2 fluctuation scale at that N
};

FlowPropertyResult flow_property_check(const ProblemSpec& spec, const EmpiricalMeasure& theta, double s,
                                       double horizon, double dt, std::size_t n_particles, std::uint64_t seed);

struct ContractionResult {
  std::vector<double> times;
  std::vector<double> distances;
  double rate = 0.0;        // magnitude of the fitted slope of log W_p
  double intercept = 0.0;
  std::size_t fitted_points = 0;
  bool truncated = false;
  std::string note;
};

// Two interacting particle systems driven by identical increments.
ContractionResult contraction_rate(const ProblemSpec& spec, const EmpiricalMeasure& theta,
                                   const EmpiricalMeasure& theta_prime, double dt, double horizon,
                                   std::size_t n_particles, std::uint64_t seed, double p = 2.0,
                                   std::size_t record_every = 10);

// Least-squares fit y = a + b t; returns {a, b}.
std::pair<double, double> linear_fit(std::span<const double> t, std::span<const double> y);

}  // namespace mvlab
