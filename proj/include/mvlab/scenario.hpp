#pragma once

#include "mvlab/model.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvlab {

class ScenarioError : public std::invalid_argument {
 public:
  ScenarioError(std::string source, std::size_t line, std::size_t column, const std::string& message);
  std::string source;
  std::size_t line;
  std::size_t column;
  std::string message;
};

// Evaluation context of a compiled expression.
struct ExprEnv {
  State x;
  const MeasureSummary* mu = nullptr;
  std::span<const double> z;
  std::span<const double> a;
  double t = 0.0;
};

struct CompiledExpr {
  std::function<double(const ExprEnv&)> eval;
  bool uses_x = false, uses_measure = false, uses_z = false, uses_a = false, uses_t = false;
  std::optional<double> constant;
};

// Expression grammar: numbers, x x1.. m1 m2 z z1.. a a1.. t, E[expr] (registered
// as a measure feature), sin cos tanh exp abs sqrt log, + - * / ^ and parentheses.
// Errors report the column inside `text` plus column_offset.
CompiledExpr compile_expression(const std::string& text, int dim, int control_dim, std::vector<FeatureFn>& features,
                                const std::string& source = "<expr>", std::size_t line = 1,
                                std::size_t column_offset = 0);

struct Scenario {
  std::string path;
  std::string text;
  ProblemSpec spec;
  // Flattened "section.key" -> raw value, e.g. "run.dt".
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  double number(const std::string& key, double fallback) const;
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const;
  // Subcommand section first ("run.<cmd>.key"), then "run.key".
  std::string run_get(const std::string& cmd, const std::string& key, const std::string& fallback) const;
  double run_number(const std::string& cmd, const std::string& key, double fallback) const;
  std::vector<double> run_numbers(const std::string& cmd, const std::string& key, std::vector<double> fallback) const;
};

Scenario parse_scenario(const std::string& text, const std::string& source = "<scenario>");
Scenario load_scenario(const std::string& path);

}  // namespace mvlab
