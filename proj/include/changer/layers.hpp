#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "changer/autodiff.hpp"
#include "changer/rng.hpp"

namespace changer {

/// Kaiming-uniform over fan-in with leaky slope sqrt(5): U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void kaiming_uniform(Tensor4& weight, int fan_in, Rng& rng);

/// Convolution leaf indices plus geometry. Linear layers are 1x1 convolutions.
struct Conv2d {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
  int stride = 1;
  int pad = 0;
  int groups = 1;

  static Conv2d create(Parameters& params, const std::string& name, int in_channels, int out_channels, int kernel,
                       int stride, int pad, int groups, bool with_bias, Rng& rng);
  static Conv2d linear(Parameters& params, const std::string& name, int in_channels, int out_channels, Rng& rng) {
    return create(params, name, in_channels, out_channels, 1, 1, 0, 1, true, rng);
  }

  Var operator()(Tape& tape, Parameters& params, Var x) const;

  Shape output_shape(const Parameters& params, const Shape& in) const;
  std::uint64_t macs(const Parameters& params, const Shape& in) const;
};

struct InstanceNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  double eps = 1e-5;

  static InstanceNorm create(Parameters& params, const std::string& name, int channels);
  Var operator()(Tape& tape, Parameters& params, Var x) const;
};

} // namespace changer
