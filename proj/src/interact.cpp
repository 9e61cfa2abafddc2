#include "changer/interact.hpp"

#include <algorithm>
#include <stdexcept>

namespace changer {

std::size_t ExchangeMask::count() const {
  return static_cast<std::size_t>(std::count_if(flags.begin(), flags.end(), [](std::uint8_t f) { return f != 0; }));
}

ExchangeMask make_channel_mask(int channels, int period) {
  if (channels < 1) {
    throw std::invalid_argument("make_channel_mask: channels must be >= 1");
  }
  if (period < 2) {
    throw std::invalid_argument("make_channel_mask: period must be >= 2 (p=1 swaps the branches wholesale)");
  }
  ExchangeMask m{ExchangeAxis::Channel, std::vector<std::uint8_t>(static_cast<std::size_t>(channels)), period, 1};
  for (int i = 0; i < channels; ++i) {
    m.flags[static_cast<std::size_t>(i)] = (i % period == 0) ? 1 : 0;
  }
  return m;
}

ExchangeMask make_spatial_mask(int width, int period, int window) {
  if (width < 1 || window < 1) {
    throw std::invalid_argument("make_spatial_mask: width and window must be >= 1");
  }
  if (period < 2) {
    throw std::invalid_argument("make_spatial_mask: period must be >= 2 (p=1 swaps the branches wholesale)");
  }
  ExchangeMask m{ExchangeAxis::Spatial, std::vector<std::uint8_t>(static_cast<std::size_t>(width)), period, window};
  for (int j = 0; j < width; ++j) {
    m.flags[static_cast<std::size_t>(j)] = ((j / window) % period == 0) ? 1 : 0;
  }
  return m;
}

namespace {

void check_exchange(const Tensor4& x0, const Tensor4& x1, const ExchangeMask& mask) {
  require_same_shape(x0, x1, "exchange");
  const Shape& s = x0.shape();
  const std::size_t expected = mask.axis == ExchangeAxis::Channel ? static_cast<std::size_t>(s.c)
                                                                   : static_cast<std::size_t>(s.w);
  if (mask.flags.size() != expected) {
    throw ShapeError("exchange: mask length " + std::to_string(mask.flags.size()) + " does not match " +
                     (mask.axis == ExchangeAxis::Channel ? "channel" : "width") + " extent of " + s.str());
  }
}

// out = mask ? on_true : on_false, elementwise over the mask's broadcast.
template <class Fn>
void for_each_position(const Shape& s, const ExchangeMask& mask, Fn&& fn) {
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const bool channel_swap = mask.axis == ExchangeAxis::Channel && mask.exchanged(c);
      for (int h = 0; h < s.h; ++h) {
        for (int w = 0; w < s.w; ++w, ++i) {
          const bool swap = mask.axis == ExchangeAxis::Channel ? channel_swap : mask.exchanged(w);
          fn(i, swap);
        }
      }
    }
  }
}

} // namespace

std::pair<Tensor4, Tensor4> exchange(const Tensor4& x0, const Tensor4& x1, const ExchangeMask& mask) {
  check_exchange(x0, x1, mask);
  Tensor4 out0(x0.shape());
  Tensor4 out1(x0.shape());
  for_each_position(x0.shape(), mask, [&](std::size_t i, bool swap) {
    out0[i] = swap ? x1[i] : x0[i];
    out1[i] = swap ? x0[i] : x1[i];
  });
  return {std::move(out0), std::move(out1)};
}

std::pair<Var, Var> exchange(Var x0, Var x1, const ExchangeMask& mask) {
  if (!x0.valid() || x0.tape != x1.tape) {
    throw std::invalid_argument("exchange: operands must live on the same tape");
  }
  Tape& tape = *x0.tape;
  auto [v0, v1] = exchange(x0.value(), x1.value(), mask);

  // `own` is the branch an output keeps where the mask is off.
  auto route = [mask](Var own, Var other) {
    return [mask, own, other](Tape& tp, const Tensor4& gy) {
      Tensor4* g_own = tp.grad_sink(own);
      Tensor4* g_other = tp.grad_sink(other);
      for_each_position(gy.shape(), mask, [&](std::size_t i, bool swap) {
        Tensor4* dst = swap ? g_other : g_own;
        if (dst) (*dst)[i] += gy[i];
      });
    };
  };
  const Var out0 = tape.record(std::move(v0), {x0, x1}, route(x0, x1));
  const Var out1 = tape.record(std::move(v1), {x0, x1}, route(x1, x0));
  return {out0, out1};
}

ADLayer ADLayer::create(Parameters& params, const std::string& name, int channels, int ratio, Rng& rng) {
  if (ratio < 1 || channels % ratio != 0) {
    throw std::invalid_argument(name + ": channels " + std::to_string(channels) +
                                " not divisible by squeeze ratio " + std::to_string(ratio));
  }
  ADLayer layer;
  layer.channels = channels;
  layer.ratio = ratio;
  layer.squeeze = Conv2d::linear(params, name + ".mlp1", channels, channels / ratio, rng);
  layer.expand = Conv2d::linear(params, name + ".mlp2", channels / ratio, 2 * channels, rng);
  return layer;
}

ADLayer::Output ADLayer::forward(Tape& tape, Parameters& params, Var x0, Var x1) const {
  if (x0.shape().c != channels) {
    throw ShapeError("ad_interact: expected " + std::to_string(channels) + " channels, got " + x0.shape().str());
  }
  const Var pooled = global_avg_pool(add(x0, x1));
  const Var logits = expand(tape, params, relu(squeeze(tape, params, pooled)));
  const Var att0 = sigmoid(slice_c(logits, 0, channels));
  const Var att1 = sigmoid(slice_c(logits, channels, channels));
  return Output{channel_scale(x0, att0), channel_scale(x1, att1), logits};
}

std::size_t ADLayer::param_count() const {
  const std::size_t hidden = static_cast<std::size_t>(channels / ratio);
  return channels * hidden + hidden + hidden * 2 * channels + 2 * static_cast<std::size_t>(channels);
}

std::uint64_t ADLayer::macs(int batch) const {
  const std::uint64_t hidden = static_cast<std::uint64_t>(channels / ratio);
  return static_cast<std::uint64_t>(batch) * (channels * hidden + hidden * 2 * channels);
}

} // namespace changer
