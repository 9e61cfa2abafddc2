#pragma once

#include <doctest.h>

#include "changer/rng.hpp"
#include "changer/tensor.hpp"

namespace test {

inline changer::Tensor4 random(const changer::Shape& s, changer::Rng& rng, double lo = -1.0, double hi = 1.0) {
  changer::Tensor4 t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline changer::Tensor4 iota(const changer::Shape& s, double start = 0.0) {
  changer::Tensor4 t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = start + static_cast<double>(i);
  return t;
}

inline double max_abs_diff(const changer::Tensor4& a, const changer::Tensor4& b) {
  REQUIRE(a.shape() == b.shape());
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

} // namespace test
