#pragma once

#include <cstdint>
#include <string>

#include "changer/layers.hpp"

namespace changer {

/// Channel concatenation of the two branches; no parameters.
Var concat_fuse(Var x0, Var x1);

/// Flow dual-alignment fusion.
///
/// A small flow network (depthwise 3x3 -> instance norm -> GELU -> pointwise
/// to 4 channels) predicts two offset fields from concat(x0, x1). Channels 0-1
/// warp x0, channels 2-3 warp x1; each field is (dx, dy) in feature pixels.
/// The fused output is concat(warp(x0, flow0) - x1, warp(x1, flow1) - x0).
struct FDAFLayer {
  Conv2d depthwise;
  InstanceNorm norm;
  Conv2d pointwise;
  int channels = 0;
  int kernel = 3;

  struct Flows {
    Var flow0;
    Var flow1;
  };

  /// The pointwise stage starts at zero, so initial flows are zero.
  static FDAFLayer create(Parameters& params, const std::string& name, int channels, Rng& rng);

  Flows flow_net(Tape& tape, Parameters& params, Var x0, Var x1) const;
  Var fuse(Tape& tape, Parameters& params, Var x0, Var x1) const;

  std::size_t param_count() const;
  std::uint64_t macs(int batch, int height, int width) const;
};

} // namespace changer
