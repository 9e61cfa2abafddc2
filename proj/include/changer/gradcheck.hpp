#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "changer/autodiff.hpp"

namespace changer {

/// Builds a scalar loss on the given tape from the parameters.
using LossFn = std::function<Var(Tape&, Parameters&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-6;
  /// Coordinates probed per leaf; leaves at most this large are probed exhaustively.
  int probes_per_leaf = 24;
  std::uint64_t seed = 0;
};

struct LeafError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

struct GradCheckReport {
  std::vector<LeafError> leaves;
  double worst = 0.0;
  std::string worst_leaf;
  bool passed = true;
};

/// Compares backward() against central differences, coordinate by coordinate:
/// |analytic - numeric| / max(1, |analytic|) <= tol.
/// Throws NumericError if two evaluations at the same point disagree.
GradCheckReport grad_check(const LossFn& f, Parameters& params, const GradCheckOptions& options = {});

} // namespace changer
