#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvlab {

// Atoms are stored one per row so that a particle's coordinates are contiguous.
using StateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using State = std::span<const double>;

inline State row(const StateMatrix& m, Eigen::Index i) {
  return State(m.data() + i * m.cols(), static_cast<std::size_t>(m.cols()));
}
inline std::span<double> row(StateMatrix& m, Eigen::Index i) {
  return std::span<double>(m.data() + i * m.cols(), static_cast<std::size_t>(m.cols()));
}

class UnsupportedSizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Weighted cloud of atoms in R^d.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;
  EmpiricalMeasure(StateMatrix points, Eigen::VectorXd weights);

  static EmpiricalMeasure uniform(StateMatrix points);
  static EmpiricalMeasure dirac(std::span<const double> x);
  static EmpiricalMeasure dirac(double x) { return dirac(std::span<const double>(&x, 1)); }

  int dim() const { return static_cast<int>(points_.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  const StateMatrix& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  State atom(std::size_t i) const { return row(points_, static_cast<Eigen::Index>(i)); }
  bool equal_weights() const { return equal_weights_; }

  Eigen::VectorXd mean() const;
  // Index of the atom selected by a uniform draw u in (0, 1).
  std::size_t sample_index(double u) const;

 private:
  StateMatrix points_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd cumulative_;
  bool equal_weights_ = true;
};

using FeatureFn = std::function<double(State)>;

// What coefficients are allowed to see of a measure: its mean, its second
// moment and the expectations of a model-declared list of test functions.
struct MeasureSummary {
  std::vector<double> mean;
  double second_moment = 0.0;
  std::vector<double> features;
};

MeasureSummary summarize(const EmpiricalMeasure& mu, const std::vector<FeatureFn>& features);
MeasureSummary summarize(const StateMatrix& points, const std::vector<FeatureFn>& features);

// (sum_i w_i |x_i|^p)^(1/p)
double moment(const EmpiricalMeasure& mu, double p);

// Exact W_p for p in {1, 2}. In one dimension this uses the quantile coupling;
// otherwise an optimal assignment over equal-size clouds (N <= 2048).
double wasserstein(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p);
// Assignment route regardless of dimension (equal sizes and weights).
double wasserstein_assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p);

inline constexpr std::size_t kMaxAssignmentSize = 2048;

// Minimum-cost perfect matching on a square cost matrix (row -> column).
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

// Typical two-sample W2 between independent N-atom samples of the law behind
// `mu`, estimated from the split of mu into its even and odd atoms.
double two_sample_w2_scale(const EmpiricalMeasure& mu);

// Time-indexed law flow. Measures are piecewise constant in time: the value on
// [t_k, t_{k+1}) is node k. Atoms may be dropped to save memory; summaries
// are always kept. A stationary flow has one node and covers every horizon.
class MeasureFlow {
 public:
  MeasureFlow() = default;

  static MeasureFlow stationary(std::shared_ptr<const EmpiricalMeasure> mu, MeasureSummary summary);

  void append(double t, MeasureSummary summary, std::shared_ptr<const EmpiricalMeasure> atoms = nullptr);

  bool is_stationary() const { return stationary_; }
  std::size_t nodes() const { return times_.size(); }
  const std::vector<double>& times() const { return times_; }
  double horizon() const;
  bool covers(double t) const;

  std::size_t node_at(double t) const;
  const MeasureSummary& summary_at(double t) const { return summaries_[node_at(t)]; }
  const MeasureSummary& summary(std::size_t k) const { return summaries_[k]; }
  bool has_atoms(std::size_t k) const { return atoms_[k] != nullptr; }
  const EmpiricalMeasure& atoms(std::size_t k) const;
  const EmpiricalMeasure& atoms_at(double t) const { return atoms(node_at(t)); }
  std::shared_ptr<const EmpiricalMeasure> atoms_ptr(std::size_t k) const { return atoms_[k]; }
  const EmpiricalMeasure& terminal() const;

 private:
  std::vector<double> times_;
  std::vector<MeasureSummary> summaries_;
  std::vector<std::shared_ptr<const EmpiricalMeasure>> atoms_;
  bool stationary_ = false;
};

// CSV: one atom per row, coordinates then weight.
void write_measure_csv(std::ostream& os, const EmpiricalMeasure& mu);
EmpiricalMeasure read_measure_csv(std::istream& is);
// Flow summary CSV: time, mean coordinates, second moment, features.
void write_flow_csv(std::ostream& os, const MeasureFlow& flow);

struct ProblemSpec;

struct InvariantEstimate {
  EmpiricalMeasure mu_star;
  MeasureSummary summary;
  double stationarity_w2 = 0.0;
  double tolerance = 0.0;
  bool nonstationary = false;
  std::string warning;
};

// Runs the interacting particle system from delta_0 up to t_burn and keeps
// the terminal ensemble. The diagnostic compares the clouds at t_burn / 2 and
// t_burn.
InvariantEstimate invariant_measure(const ProblemSpec& spec, std::size_t n_particles, double dt,
                                    double t_burn, std::uint64_t seed);

}  // namespace mvlab
