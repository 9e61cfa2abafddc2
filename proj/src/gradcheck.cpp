#include "changer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "changer/rng.hpp"

namespace changer {

namespace {

double evaluate(const LossFn& f, Parameters& params) {
  Tape tape;
  const Var loss = f(tape, params);
  if (loss.value().numel() != 1) {
    throw ShapeError("grad_check: loss must be scalar, got " + loss.value().shape().str());
  }
  return loss.value()[0];
}

std::vector<std::size_t> probe_indices(std::size_t numel, int budget, Rng& rng) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (numel <= static_cast<std::size_t>(budget)) {
    return idx;
  }
  // partial Fisher-Yates
  for (int i = 0; i < budget; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.bits() % (numel - static_cast<std::size_t>(i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(budget));
  std::sort(idx.begin(), idx.end());
  return idx;
}

} // namespace

GradCheckReport grad_check(const LossFn& f, Parameters& params, const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) {
    throw std::invalid_argument("grad_check: eps must be positive");
  }
  params.zero_grad();
  double base = 0.0;
  {
    Tape tape;
    const Var loss = f(tape, params);
    base = loss.value()[0];
    tape.backward(loss);
  }
  const double again = evaluate(f, params);
  if (std::memcmp(&base, &again, sizeof(double)) != 0) {
    throw NumericError("grad_check: loss function is not deterministic");
  }

  Rng rng(options.seed, 0x6772616463686bULL);
  GradCheckReport report;
  for (ParamEntry& entry : params) {
    if (!entry.trainable) {
      continue;
    }
    LeafError leaf{entry.name, 0.0, 0};
    const Tensor4 analytic = entry.grad;
    for (std::size_t i : probe_indices(entry.value.numel(), options.probes_per_leaf, rng)) {
      const double original = entry.value[i];
      entry.value[i] = original + options.eps;
      const double plus = evaluate(f, params);
      entry.value[i] = original - options.eps;
      const double minus = evaluate(f, params);
      entry.value[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      leaf.max_rel_error = std::max(leaf.max_rel_error, std::isfinite(rel) ? rel : HUGE_VAL);
      ++leaf.probes;
    }
    if (report.worst_leaf.empty() || leaf.max_rel_error > report.worst) {
      report.worst = leaf.max_rel_error;
      report.worst_leaf = leaf.name;
    }
    report.leaves.push_back(std::move(leaf));
  }
  report.passed = report.worst <= options.tol;
  return report;
}

} // namespace changer
