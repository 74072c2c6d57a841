#pragma once

#include "mvlab/measure.hpp"
#include "mvlab/model.hpp"
#include "mvlab/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvlab {

class BasisDegeneracyError : public std::runtime_error {
 public:
  BasisDegeneracyError(std::size_t node, double condition);
  std::size_t node;
  double condition;
};

class BudgetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Monomials of total degree <= degree in standardized coordinates.
class BasisSpec {
 public:
  BasisSpec() = default;
  BasisSpec(int dim, int degree);

  int dim() const { return dim_; }
  int degree() const { return degree_; }
  std::size_t size() const { return exponents_.size(); }
  const std::vector<std::vector<int>>& exponents() const { return exponents_; }

  // s is the standardized state.
  void eval(std::span<const double> s, std::span<double> out) const;
  // out(p, j) = d phi_p / d s_j, row-major size() x dim.
  void gradient(std::span<const double> s, std::span<double> out) const;

 private:
  int dim_ = 0;
  int degree_ = 0;
  std::vector<std::vector<int>> exponents_;
};

// Basis expansion on a time grid: at node k, f_k(x) = C_k^T phi((x - c_k) / s_k)
// with C_k of shape basis size x outputs.
class RegressionFunction {
 public:
  struct Node {
    Eigen::VectorXd center;
    Eigen::VectorXd scale;
    Eigen::MatrixXd coef;
    Eigen::VectorXd lo;  // domain box of the data the node was fitted on
    Eigen::VectorXd hi;
  };

  RegressionFunction() = default;
  RegressionFunction(BasisSpec basis, int outputs, std::vector<double> times);

  const BasisSpec& basis() const { return basis_; }
  int outputs() const { return outputs_; }
  std::size_t nodes() const { return nodes_.size(); }
  const std::vector<double>& times() const { return times_; }
  Node& node(std::size_t k) { return nodes_[k]; }
  const Node& node(std::size_t k) const { return nodes_[k]; }

  // Nearest grid node; off_grid is set when t is not a grid time.
  std::size_t node_at(double t, bool* off_grid = nullptr) const;

  void eval(std::size_t k, State x, std::span<double> out) const;
  double value(std::size_t k, State x) const;  // first output
  // out(o, j) = d f_o / d x_j, row-major outputs x dim.
  void gradient(std::size_t k, State x, std::span<double> out) const;

  // Adds delta to the constant term of output o at node k.
  void shift(std::size_t k, int o, double delta);
  // Re-expands node k around a new center, same function up to rounding.
  void recenter(std::size_t k, std::span<const double> center);

 private:
  BasisSpec basis_;
  int outputs_ = 1;
  std::vector<double> times_;
  std::vector<Node> nodes_;
};

void write_regression_csv(std::ostream& os, const RegressionFunction& f);

struct BsdeOptions {
  int degree = 0;              // 0: max(q + 1, 3)
  std::size_t picard = 1;
  double spread = -1.0;        // negative: standard deviation of the flow's terminal law
  double alpha = 0.0;          // discount in the node update
  double ridge = 1e-10;
  bool keep_functions = true;  // u and z regressions at every node, else node 0 only
  Stream stream = Stream::kDecoupled;
};

struct BsdeSolution {
  double y0 = 0.0;
  double y0_stderr = 0.0;
  std::vector<double> z0;
  std::vector<double> x0;
  double horizon = 0.0;
  double dt = 0.0;
  double alpha = 0.0;
  std::size_t steps = 0;
  double spread = 0.0;

  RegressionFunction u;         // regression of Y_k on X_k
  RegressionFunction z;         // regression of Z_k on X_k
  RegressionFunction condexp0;  // E[Y_1 | X_0]
  std::vector<double> residual_rms;
  std::vector<double> picard_history;
  bool picard_warning = false;

  DriverFn driver;
  MeasureSummary mu0;

  // Y_0 at an arbitrary start point, read off the node-0 regressions.
  double y0_at(State x) const;
  std::vector<double> z0_at(State x) const;
};

BsdeSolution solve_finite_bsde(const ProblemSpec& spec, const MeasureFlow& flow, std::span<const double> x0,
                               double horizon, double dt, std::size_t n_particles, std::uint64_t seed,
                               const BsdeOptions& opts = {});

struct GradientZ {
  std::vector<double> z;
  bool off_grid = false;
  std::size_t node = 0;
};

// grad_x u(t, x) sigma(x, mu_t) from the analytic basis derivative.
GradientZ z_from_gradient(const BsdeSolution& sol, const ProblemSpec& spec, const MeasureFlow& flow, double t,
                          std::span<const double> x);

// Plain Monte Carlo of g(X_T, mu_T) + int f(X, mu, 0) dt from x0, for z-free drivers.
struct MonteCarloValue {
  double mean = 0.0;
  double stderr_ = 0.0;
};
MonteCarloValue plain_monte_carlo(const ProblemSpec& spec, const MeasureFlow& flow, std::span<const double> x0,
                                  double horizon, double dt, std::size_t n_particles, std::uint64_t seed);

void write_bsde_report(std::ostream& os, const BsdeSolution& sol);

}  // namespace mvlab
