#include "changer/fusion.hpp"

namespace changer {

Var concat_fuse(Var x0, Var x1) {
  if (!(x0.shape() == x1.shape())) {
    throw ShapeError("concat_fuse: shape mismatch " + x0.shape().str() + " vs " + x1.shape().str());
  }
  return concat_c({x0, x1});
}

FDAFLayer FDAFLayer::create(Parameters& params, const std::string& name, int channels, Rng& rng) {
  FDAFLayer layer;
  layer.channels = channels;
  const int both = 2 * channels;
  layer.depthwise = Conv2d::create(params, name + ".flow.dw", both, both, layer.kernel, 1, layer.kernel / 2, both,
                                   false, rng);
  layer.norm = InstanceNorm::create(params, name + ".flow.norm", both);
  layer.pointwise = Conv2d::create(params, name + ".flow.pw", both, 4, 1, 1, 0, 1, true, rng);
  params[layer.pointwise.weight].value.vec().setZero();
  return layer;
}

FDAFLayer::Flows FDAFLayer::flow_net(Tape& tape, Parameters& params, Var x0, Var x1) const {
  if (!(x0.shape() == x1.shape())) {
    throw ShapeError("flow_net: shape mismatch " + x0.shape().str() + " vs " + x1.shape().str());
  }
  if (x0.shape().c != channels) {
    throw ShapeError("flow_net: expected " + std::to_string(channels) + " channels, got " + x0.shape().str());
  }
  Var h = depthwise(tape, params, concat_c({x0, x1}));
  h = gelu(norm(tape, params, h));
  const Var flows = pointwise(tape, params, h);
  return Flows{slice_c(flows, 0, 2), slice_c(flows, 2, 2)};
}

Var FDAFLayer::fuse(Tape& tape, Parameters& params, Var x0, Var x1) const {
  const Flows f = flow_net(tape, params, x0, x1);
  return concat_c({grid_sample(x0, f.flow0) - x1, grid_sample(x1, f.flow1) - x0});
}

std::size_t FDAFLayer::param_count() const {
  const std::size_t both = 2 * static_cast<std::size_t>(channels);
  const std::size_t k2 = static_cast<std::size_t>(kernel) * kernel;
  return both * k2 + 2 * both + both * 4 + 4;
}

std::uint64_t FDAFLayer::macs(int batch, int height, int width) const {
  const std::uint64_t pixels = static_cast<std::uint64_t>(batch) * height * width;
  const std::uint64_t both = 2 * static_cast<std::uint64_t>(channels);
  return pixels * both * kernel * kernel + pixels * 4 * both;
}

} // namespace changer
