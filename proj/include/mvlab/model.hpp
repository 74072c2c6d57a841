#pragma once

#include "mvlab/measure.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mvlab {

using DriftFn = std::function<void(double t, State x, const MeasureSummary& mu, std::span<double> out)>;
// Writes sigma(x, mu) as a row-major d x d matrix.
using DiffusionFn = std::function<void(State x, const MeasureSummary& mu, std::span<double> out)>;
using DriverFn = std::function<double(State x, const MeasureSummary& mu, std::span<const double> z)>;
using TerminalFn = std::function<double(State x, const MeasureSummary& mu)>;
using RunningCostFn = std::function<double(State x, const MeasureSummary& mu, std::span<const double> a)>;
using StateCostFn = std::function<double(State x, const MeasureSummary& mu)>;

enum class Regime { kStrongDissipative, kWeakDissipative };

const char* to_string(Regime r);

// Structural constants of the model. Unused entries stay at zero.
struct Constants {
  double nu = 0.0;          // L-dissipativity
  double eta = 0.0;         // pointwise dissipativity (outside the ball in the weak regime)
  double kb_x = 0.0;        // Lipschitz constant of b in x
  double kb_law = 0.0;      // Lipschitz constant of b in the measure
  double ks_x = 0.0;        // (1/2)|sigma(x)-sigma(x')|^2 <= ks_x |x-x'|^2 + ...
  double ks_law = 0.0;
  double sigma0 = 0.0;      // ellipticity: sigma sigma^T >= sigma0^2 I
  double ball_radius = 0.0;
  double m_b = 0.0;         // drift bound inside the ball (weak regime)
  double growth_q = 0.0;
  double holder_eps = 1.0;
  double interaction = 0.0; // interaction strength of the preset, informational
};

// Box control set A = prod [lo_i, hi_i] acting through the d x k matrix R.
// When `quadratic` is set the running cost is L = state_cost(x, mu) + |a|^2
// and the Hamiltonian has a closed form.
struct ControlSet {
  std::vector<double> lo;
  std::vector<double> hi;
  Eigen::MatrixXd r;
  bool quadratic = false;
  bool separable = true;
  StateCostFn state_cost;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(std::span<const double> a, double tol = 0.0) const;
  // sup_{a in A} |R a|
  double reach() const;
};

struct ProblemSpec {
  std::string name;
  int dim = 1;
  Regime regime = Regime::kStrongDissipative;
  Constants constants;
  std::vector<FeatureFn> features;

  DriftFn drift;
  DiffusionFn diffusion;
  bool diffusion_depends_on_measure = false;
  DriverFn driver;
  bool driver_depends_on_z = false;
  TerminalFn terminal;

  RunningCostFn running_cost;
  std::optional<ControlSet> control;

  MeasureSummary summarize(const EmpiricalMeasure& mu) const { return mvlab::summarize(mu, features); }
  MeasureSummary summarize(const StateMatrix& points) const { return mvlab::summarize(points, features); }

  // Contraction rate implied by the declared constants: nu - (ks_x + ks_law)
  // in the strong regime, eta - ks_x in the weak one.
  double nominal_rate() const;

  // Throws std::invalid_argument on violated invariants.
  void validate() const;
};

class UnknownPresetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// One-dimensional spec with drift b(t, x, mu), constant diffusion sigma,
// f = 0 and g = 0. Constants are left for the caller.
ProblemSpec scalar_spec(std::string name, std::function<double(double, double, const MeasureSummary&)> b,
                        double sigma);

// ou-attract, ou-repel, sine-weak, control-lq.
ProblemSpec preset(const std::string& name);
std::vector<std::string> preset_names();

// Hamiltonian driver f(x, mu, z) = inf_a L(x, mu, a) + z R a built on the
// spec's control data.
DriverFn hamiltonian_driver(const ProblemSpec& spec);

enum class Verdict { kPass, kFail, kIndeterminate };
const char* to_string(Verdict v);

struct Witness {
  std::vector<double> x;
  std::vector<double> x_prime;
  double quotient = 0.0;
};

struct AssumptionCheck {
  std::string name;
  Verdict verdict = Verdict::kIndeterminate;
  double measured = 0.0;   // worst quotient over the sample
  double threshold = 0.0;  // declared bound it is compared against
  std::vector<Witness> witnesses;
};

struct AuditReport {
  std::string spec_name;
  std::vector<AssumptionCheck> checks;
  double lambda = 0.0;               // nu - (ks_x + ks_law)
  double weak_rate = 0.0;            // measured dissipativity outside the ball
  double interaction_bound = 0.0;       // bound the interaction constant must stay below
  double driver_growth = 0.0;        // fitted C in |f(x,mu,0)| <= C(1+|x|^{q+1}+|mu|^{q+1})
  double terminal_growth = 0.0;

  const AssumptionCheck& check(const std::string& name) const;
  bool passed() const;
};

// Sampled assumption audit. Deterministic given (spec, n_samples, seed).
AuditReport audit(const ProblemSpec& spec, std::size_t n_samples, std::uint64_t seed);

void write_audit_csv(std::ostream& os, const AuditReport& report);

// Empirical growth constant of |f(x, mu, 0)| against the polynomial envelope.
double driver_growth_constant(const ProblemSpec& spec, std::size_t n_samples, std::uint64_t seed);

}  // namespace mvlab
