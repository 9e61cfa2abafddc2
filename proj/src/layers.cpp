#include "changer/layers.hpp"

#include <cmath>

#include "changer/kernels.hpp"

namespace changer {

void kaiming_uniform(Tensor4& weight, int fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / fan_in);
  for (std::size_t i = 0; i < weight.numel(); ++i) {
    weight[i] = rng.uniform(-bound, bound);
  }
}

Conv2d Conv2d::create(Parameters& params, const std::string& name, int in_channels, int out_channels, int kernel,
                      int stride, int pad, int groups, bool with_bias, Rng& rng) {
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ShapeError(name + ": channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                     " not divisible by groups=" + std::to_string(groups));
  }
  Tensor4 w(Shape{out_channels, in_channels / groups, kernel, kernel});
  kaiming_uniform(w, in_channels / groups * kernel * kernel, rng);
  Conv2d conv;
  conv.weight = params.add(name + ".weight", std::move(w));
  if (with_bias) {
    conv.bias = params.add(name + ".bias", Tensor4(Shape{1, out_channels, 1, 1}), false);
  }
  conv.stride = stride;
  conv.pad = pad;
  conv.groups = groups;
  return conv;
}

Var Conv2d::operator()(Tape& tape, Parameters& params, Var x) const {
  const Var w = tape.param(params[weight]);
  const Var b = bias ? tape.param(params[*bias]) : Var{};
  return conv2d(x, w, b, stride, pad, groups);
}

Shape Conv2d::output_shape(const Parameters& params, const Shape& in) const {
  return kernels::conv_output_shape(in, params[weight].value.shape(), {stride, pad, groups});
}

std::uint64_t Conv2d::macs(const Parameters& params, const Shape& in) const {
  return kernels::conv2d_macs(in, params[weight].value.shape(), {stride, pad, groups});
}

InstanceNorm InstanceNorm::create(Parameters& params, const std::string& name, int channels) {
  InstanceNorm norm;
  norm.gamma = params.add(name + ".gamma", Tensor4(Shape{1, channels, 1, 1}, 1.0), false);
  norm.beta = params.add(name + ".beta", Tensor4(Shape{1, channels, 1, 1}, 0.0), false);
  return norm;
}

Var InstanceNorm::operator()(Tape& tape, Parameters& params, Var x) const {
  return instance_norm(x, tape.param(params[gamma]), tape.param(params[beta]), eps);
}

} // namespace changer
