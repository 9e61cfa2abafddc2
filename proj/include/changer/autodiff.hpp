#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "changer/tensor.hpp"

namespace changer {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor4& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward() walks
/// them in reverse and accumulates gradients into bound parameters.
class Tape {
public:
  using BackwardFn = std::function<void(Tape&, const Tensor4& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that never receives a gradient.
  Var constant(Tensor4 value);
  /// Free leaf whose gradient is readable through grad() after backward().
  Var variable(Tensor4 value);
  /// Leaf bound to a parameter; binding the same entry twice yields the same node.
  Var param(ParamEntry& entry);

  Var record(Tensor4 value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor4 value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor4& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  /// Gradient buffer of v, zero-allocated on first use; null when v needs no gradient.
  Tensor4* grad_sink(Var v);
  /// Gradient of a leaf after backward(); empty tensor if none reached it.
  const Tensor4& grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }

  /// Seeds d(loss)/d(loss) = 1. Parameter gradients accumulate across calls.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Tensor4 value;
    Tensor4 grad;
    bool requires_grad = false;
    BackwardFn backward;
    ParamEntry* sink = nullptr;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const ParamEntry*, int> bound_;
};

enum class Activation { Sigmoid, Gelu, Relu };

Var conv2d(Var x, Var weight, Var bias, int stride, int pad, int groups = 1);
Var conv2d(Var x, Var weight, int stride, int pad, int groups = 1);
Var activation(Var x, Activation kind);
inline Var sigmoid(Var x) { return activation(x, Activation::Sigmoid); }
inline Var gelu(Var x) { return activation(x, Activation::Gelu); }
inline Var relu(Var x) { return activation(x, Activation::Relu); }
Var instance_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var global_avg_pool(Var x);
Var max_pool2d(Var x, int kernel, int stride, int pad);
Var bilinear_upsample(Var x, int factor);
/// flow is (n, 2, h, w): channel 0 column offset, channel 1 row offset, in pixels.
Var grid_sample(Var x, Var flow);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

Var concat_c(std::span<const Var> parts);
Var concat_c(std::initializer_list<Var> parts);
Var slice_c(Var x, int begin, int count);
/// x * s broadcast over h, w; s has shape (n, c, 1, 1).
Var channel_scale(Var x, Var s);

Var sum(Var x);
Var mean(Var x);

/// Multiply-accumulate audit: conv2d adds its MACs to a thread-local counter.
namespace audit {
void reset();
std::uint64_t macs();
void add_macs(std::uint64_t macs);
} // namespace audit

/// Fault hooks used as negative controls for the gradient checker.
enum class Fault { None, NegateSigmoidBackward };
void inject_fault(Fault fault);
Fault active_fault();

} // namespace changer
