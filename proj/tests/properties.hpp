#pragma once

#include <string>
#include <vector>

namespace mvlab::props {

struct Outcome {
  std::string name;
  bool ok = false;
  std::string detail;
};

Outcome metric_axioms();
Outcome w1_below_w2();
Outcome quantile_matches_assignment();
Outcome thread_determinism();
Outcome mollifier_identity();
Outcome moment_bounds();
Outcome shifted_moment_bounds();
Outcome periodic_shift_moment_bounds();
Outcome girsanov_matches_direct();

std::vector<Outcome> all();

}  // namespace mvlab::props
