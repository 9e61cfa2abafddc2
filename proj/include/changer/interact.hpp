#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "changer/layers.hpp"

namespace changer {

enum class ExchangeAxis { Channel, Spatial };

/// Which positions swap between the temporal branches. Channel masks index the
/// C axis; spatial masks index the W axis and broadcast over N, C, H.
struct ExchangeMask {
  ExchangeAxis axis = ExchangeAxis::Channel;
  std::vector<std::uint8_t> flags;
  int period = 2;
  int window = 1;

  bool exchanged(int index) const { return flags[static_cast<std::size_t>(index)] != 0; }
  std::size_t count() const;
};

/// flags[i] = (i mod p == 0); ceil(c/p) channels swap.
ExchangeMask make_channel_mask(int channels, int period);
/// Column j swaps iff floor(j / window) mod p == 0.
ExchangeMask make_spatial_mask(int width, int period, int window);

/// Swaps masked positions between x0 and x1. No parameters, no arithmetic.
std::pair<Tensor4, Tensor4> exchange(const Tensor4& x0, const Tensor4& x1, const ExchangeMask& mask);
/// Differentiable form: gradients follow the values they belong to.
std::pair<Var, Var> exchange(Var x0, Var x1, const ExchangeMask& mask);

inline std::pair<Var, Var> identity_interact(Var x0, Var x1) { return {x0, x1}; }

/// Aggregation-distribution layer: attention = sigmoid(MLP(GAP(x0 + x1))) split
/// into two c-wide halves, one per branch.
struct ADLayer {
  Conv2d squeeze;
  Conv2d expand;
  int channels = 0;
  int ratio = 4;

  struct Output {
    Var out0;
    Var out1;
    Var logits; // (n, 2c, 1, 1), pre-sigmoid
  };

  static ADLayer create(Parameters& params, const std::string& name, int channels, int ratio, Rng& rng);
  Output forward(Tape& tape, Parameters& params, Var x0, Var x1) const;

  std::size_t param_count() const;
  std::uint64_t macs(int batch) const;
};

} // namespace changer
