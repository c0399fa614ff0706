#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fecil {

struct GradCheckCase {
  std::string name;
  std::size_t trial = 0;
  double max_rel_error = 0;
  std::size_t checked = 0;  // input entries compared
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double tolerance = 1e-4;

  double worst() const;
  bool passed() const { return worst() < tolerance; }
};

/// Element-wise |a - n| / max(|a|, |n|, floor) between the recorded
/// gradient a and a central difference n.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares reverse-mode gradients of every primitive and both losses with
/// central differences of the forward pass in double precision, over
/// `trials` random cases per primitive.
GradCheckReport run_gradcheck(std::size_t trials, std::uint64_t seed, double h = 1e-5, double tolerance = 1e-4);

}  // namespace fecil
