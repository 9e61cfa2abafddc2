#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "changer/gradcheck.hpp"

namespace changer {

/// One named gradient check over a small random instance of an op or layer.
struct GradCheckCase {
  std::string name;
  std::string module; // tensor, interact, fusion, model, train
  double tol = 1e-6;
  int probes_per_leaf = 24;
  double eps = 1e-5; // central-difference step
  std::function<GradCheckReport(const GradCheckOptions&)> run;
};

const std::vector<GradCheckCase>& gradcheck_cases();

/// "all", a module name or a case name. Throws std::invalid_argument otherwise.
std::vector<const GradCheckCase*> select_gradcheck_cases(const std::string& scope);

} // namespace changer
