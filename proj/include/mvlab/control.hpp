#pragma once

#include "mvlab/bsde.hpp"
#include "mvlab/ebsde.hpp"
#include "mvlab/ltb.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvlab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvariantBreach : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HamiltonianValue {
  double value = 0.0;
  std::vector<double> a;
};

// inf_{a in A} L(x, mu, a) + z R a together with a minimizer.
HamiltonianValue hamiltonian(const ProblemSpec& spec, State x, const MeasureSummary& mu, std::span<const double> z);

enum class ZSource { kFinite, kErgodic, kConstant, kZero };
const char* to_string(ZSource s);

// Feedback a = phi(x, mu, z) with z read from one of several sources, or a
// fixed action.
class ControlPolicy {
 public:
  static ControlPolicy finite_horizon(const BsdeSolution& sol);
  static ControlPolicy ergodic(const RegressionFunction& zeta_bar);
  static ControlPolicy constant_z(std::vector<double> z);
  static ControlPolicy zero_z();
  static ControlPolicy constant_action(std::vector<double> a);

  ZSource source() const { return source_; }
  bool is_constant_action() const { return action_.has_value(); }
  std::string describe() const;

  // Writes the action into a; throws InvariantBreach if it leaves A.
  void act(const ProblemSpec& spec, double t, State x, const MeasureSummary& mu, std::span<double> z_scratch,
           std::span<double> a) const;

 private:
  ZSource source_ = ZSource::kZero;
  const RegressionFunction* z_fn_ = nullptr;
  bool node_by_time_ = false;
  std::vector<double> z_const_;
  std::optional<std::vector<double>> action_;
};

struct CostReport {
  double estimate = 0.0;
  double stderr_ = 0.0;
  double benchmark = 0.0;
  double benchmark_stderr = 0.0;
  double gap = 0.0;  // estimate - benchmark

  double combined_error() const { return std::hypot(stderr_, benchmark_stderr); }
  bool matches(double k = 3.0) const { return std::abs(gap) <= k * combined_error(); }
  bool dominates(double k = 3.0) const { return gap >= -k * combined_error(); }
};

// Controlled decoupled SDE dX = (b + sigma R a) dt + sigma dW against the
// control-free flow, every particle started at x0. Cost int L dt + g.
CostReport evaluate_cost_finite(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x0,
                                const MeasureFlow& flow, double horizon, double dt, std::size_t n_particles,
                                std::uint64_t seed, double benchmark = 0.0, double benchmark_stderr = 0.0);

// Same cost by reweighting uncontrolled paths with
// rho = exp(int (R a)^T dW - 1/2 int |R a|^2 dt).
CostReport evaluate_cost_girsanov(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x0,
                                  const MeasureFlow& flow, double horizon, double dt, std::size_t n_particles,
                                  std::uint64_t seed, double benchmark = 0.0, double benchmark_stderr = 0.0);

// Long-run average of L over the tail window [T/2, T].
CostReport evaluate_cost_ergodic(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x0,
                                 const MeasureFlow& flow, double t_long, double dt, std::size_t n_particles,
                                 std::uint64_t seed, double lambda = 0.0, double lambda_stderr = 0.0);

struct FeedbackGap {
  double horizon = 0.0;
  std::vector<double> z_t, z_bar, a_t, a_bar;
  double a_gap = 0.0;
  double z_gap = 0.0;
  bool lipschitz_ok = false;  // a_gap <= z_gap / 2
};

struct OcpLongtime {
  DecayFit cost_fit;  // |J^T - lambda T - u_bar(x0) - ell|
  std::vector<CostReport> costs;
  std::vector<FeedbackGap> feedback;
  DecayFit feedback_fit;
};

// ell is reused from ltb2.
OcpLongtime ocp_longtime(const ProblemSpec& spec, std::span<const double> x0, const MeasureFlow& flow,
                         std::span<const double> horizons, const ErgodicSolution& ergodic, double ell,
                         const LtbOptions& opts = {});

void write_cost_csv(std::ostream& os, const std::vector<std::string>& labels, const std::vector<CostReport>& costs);
void write_feedback_csv(std::ostream& os, const std::vector<FeedbackGap>& rows);

}  // namespace mvlab
