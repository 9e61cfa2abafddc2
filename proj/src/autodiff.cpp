#include "changer/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "changer/kernels.hpp"

namespace changer {

namespace {

thread_local std::uint64_t g_macs = 0;
std::atomic<Fault> g_fault{Fault::None};

Tape& tape_of(Var v, const char* op) {
  if (!v.valid()) {
    throw std::invalid_argument(std::string(op) + ": invalid Var");
  }
  return *v.tape;
}

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
}

} // namespace

namespace audit {
void reset() { g_macs = 0; }
std::uint64_t macs() { return g_macs; }
void add_macs(std::uint64_t macs) { g_macs += macs; }
} // namespace audit

void inject_fault(Fault fault) { g_fault.store(fault); }
Fault active_fault() { return g_fault.load(); }

const Tensor4& Var::value() const { return tape_of(*this, "Var::value").value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor4 value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor4 value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(ParamEntry& entry) {
  if (auto it = bound_.find(&entry); it != bound_.end()) {
    return Var{this, it->second};
  }
  Node n;
  n.value = entry.value;
  n.requires_grad = entry.trainable;
  n.sink = &entry;
  Var v = push(std::move(n));
  bound_.emplace(&entry, v.id);
  return v;
}

Var Tape::record(Tensor4 value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor4 value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape != this) {
      throw std::invalid_argument("Tape::record: input belongs to another tape");
    }
    n.requires_grad = n.requires_grad || requires_grad(in);
  }
  if (n.requires_grad) {
    n.backward = std::move(backward);
  }
  return push(std::move(n));
}

Tensor4* Tape::grad_sink(Var v) {
  Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (!n.requires_grad) {
    return nullptr;
  }
  if (n.grad.shape() != n.value.shape() || n.grad.empty() != n.value.empty()) {
    n.grad = Tensor4::zeros_like(n.value);
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) {
    throw std::invalid_argument("Tape::backward: loss belongs to another tape");
  }
  if (value(loss).numel() != 1) {
    throw ShapeError("Tape::backward: loss must be a scalar, got " + value(loss).shape().str());
  }
  for (Node& n : nodes_) {
    n.grad = Tensor4();
  }
  Tensor4* seed = grad_sink(loss);
  if (!seed) {
    return;
  }
  (*seed)[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.shape() != n.value.shape()) {
      continue; // not reached from the loss
    }
    if (n.backward) {
      n.backward(*this, n.grad);
    }
    if (n.sink) {
      if (n.sink->grad.shape() != n.value.shape()) {
        n.sink->grad = Tensor4::zeros_like(n.value);
      }
      n.sink->grad.vec() += n.grad.vec();
    }
  }
}

Var conv2d(Var x, Var weight, Var bias, int stride, int pad, int groups) {
  Tape& t = tape_of(x, "conv2d");
  require_same_tape(x, weight, "conv2d");
  const kernels::ConvGeometry g{stride, pad, groups};
  const Tensor4* b = nullptr;
  if (bias.valid()) {
    require_same_tape(x, bias, "conv2d");
    b = &bias.value();
  }
  Tensor4 y = kernels::conv2d(x.value(), weight.value(), b, g);
  audit::add_macs(kernels::conv2d_macs(x.value().shape(), weight.value().shape(), g));
  auto backward = [x, weight, bias, g](Tape& tp, const Tensor4& gy) {
    kernels::conv2d_backward(tp.value(x), tp.value(weight), gy, g, tp.grad_sink(x), tp.grad_sink(weight),
                             bias.valid() ? tp.grad_sink(bias) : nullptr);
  };
  if (bias.valid()) {
    return t.record(std::move(y), {x, weight, bias}, backward);
  }
  return t.record(std::move(y), {x, weight}, backward);
}

Var conv2d(Var x, Var weight, int stride, int pad, int groups) {
  return conv2d(x, weight, Var{}, stride, pad, groups);
}

namespace {

double sigmoid_scalar(double v) {
  if (v >= 0.0) {
    return 1.0 / (1.0 + std::exp(-v));
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double gelu_scalar(double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double v) {
  const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + v * pdf;
}

} // namespace

Var activation(Var x, Activation kind) {
  Tape& t = tape_of(x, "activation");
  const Tensor4& in = x.value();
  Tensor4 y(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) {
    switch (kind) {
    case Activation::Sigmoid: y[i] = sigmoid_scalar(in[i]); break;
    case Activation::Gelu: y[i] = gelu_scalar(in[i]); break;
    case Activation::Relu: y[i] = in[i] > 0.0 || std::isnan(in[i]) ? in[i] : 0.0; break;
    }
  }
  auto backward = [x, kind](Tape& tp, const Tensor4& gy) {
    Tensor4* gx = tp.grad_sink(x);
    if (!gx) return;
    const Tensor4& in = tp.value(x);
    for (std::size_t i = 0; i < in.numel(); ++i) {
      double d = 0.0;
      switch (kind) {
      case Activation::Sigmoid: {
        const double s = sigmoid_scalar(in[i]);
        d = s * (1.0 - s);
        if (active_fault() == Fault::NegateSigmoidBackward) d = -d;
        break;
      }
      case Activation::Gelu: d = gelu_grad(in[i]); break;
      case Activation::Relu: d = in[i] > 0.0 ? 1.0 : 0.0; break;
      }
      (*gx)[i] += gy[i] * d;
    }
  };
  return t.record(std::move(y), {x}, backward);
}

Var instance_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x, "instance_norm");
  require_same_tape(x, gamma, "instance_norm");
  require_same_tape(x, beta, "instance_norm");
  auto saved = std::make_shared<kernels::InstanceNormResult>(
      kernels::instance_norm(x.value(), gamma.value(), beta.value(), eps));
  Tensor4 y = saved->out;
  return t.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, saved](Tape& tp, const Tensor4& gy) {
    kernels::instance_norm_backward(*saved, tp.value(gamma), gy, tp.grad_sink(x), tp.grad_sink(gamma),
                                    tp.grad_sink(beta));
  });
}

Var global_avg_pool(Var x) {
  Tape& t = tape_of(x, "global_avg_pool");
  return t.record(kernels::global_avg_pool(x.value()), {x}, [x](Tape& tp, const Tensor4& gy) {
    Tensor4* gx = tp.grad_sink(x);
    if (!gx) return;
    const Shape& s = gx->shape();
    const double inv = 1.0 / static_cast<double>(s.plane());
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        Eigen::Map<Eigen::ArrayXd>(gx->plane(n, c), static_cast<Eigen::Index>(s.plane())) += gy(n, c, 0, 0) * inv;
      }
    }
  });
}

Var max_pool2d(Var x, int kernel, int stride, int pad) {
  Tape& t = tape_of(x, "max_pool2d");
  auto r = std::make_shared<kernels::MaxPoolResult>(kernels::max_pool2d(x.value(), kernel, stride, pad));
  Tensor4 y = r->out;
  return t.record(std::move(y), {x}, [x, r](Tape& tp, const Tensor4& gy) {
    if (Tensor4* gx = tp.grad_sink(x)) kernels::max_pool2d_backward(r->argmax, gy, *gx);
  });
}

Var bilinear_upsample(Var x, int factor) {
  Tape& t = tape_of(x, "bilinear_upsample");
  return t.record(kernels::bilinear_upsample(x.value(), factor), {x}, [x, factor](Tape& tp, const Tensor4& gy) {
    if (Tensor4* gx = tp.grad_sink(x)) kernels::bilinear_upsample_backward(gy, factor, *gx);
  });
}

Var grid_sample(Var x, Var flow) {
  Tape& t = tape_of(x, "grid_sample");
  require_same_tape(x, flow, "grid_sample");
  return t.record(kernels::grid_sample(x.value(), flow.value()), {x, flow}, [x, flow](Tape& tp, const Tensor4& gy) {
    kernels::grid_sample_backward(tp.value(x), tp.value(flow), gy, tp.grad_sink(x), tp.grad_sink(flow));
  });
}

namespace {

enum class Binary { Add, Sub, Mul };

Var binary(Var a, Var b, Binary kind, const char* name) {
  Tape& t = tape_of(a, name);
  require_same_tape(a, b, name);
  require_same_shape(a.value(), b.value(), name);
  const auto& va = a.value().vec();
  const auto& vb = b.value().vec();
  Eigen::VectorXd out;
  switch (kind) {
  case Binary::Add: out = va + vb; break;
  case Binary::Sub: out = va - vb; break;
  case Binary::Mul: out = va.cwiseProduct(vb); break;
  }
  return t.record(Tensor4(a.value().shape(), std::move(out)), {a, b}, [a, b, kind](Tape& tp, const Tensor4& gy) {
    Tensor4* ga = tp.grad_sink(a);
    Tensor4* gb = tp.grad_sink(b);
    switch (kind) {
    case Binary::Add:
      if (ga) ga->vec() += gy.vec();
      if (gb) gb->vec() += gy.vec();
      break;
    case Binary::Sub:
      if (ga) ga->vec() += gy.vec();
      if (gb) gb->vec() -= gy.vec();
      break;
    case Binary::Mul:
      if (ga) ga->vec() += gy.vec().cwiseProduct(tp.value(b).vec());
      if (gb) gb->vec() += gy.vec().cwiseProduct(tp.value(a).vec());
      break;
    }
  });
}

} // namespace

Var add(Var a, Var b) { return binary(a, b, Binary::Add, "add"); }
Var sub(Var a, Var b) { return binary(a, b, Binary::Sub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, Binary::Mul, "mul"); }

Var scale(Var x, double factor) {
  Tape& t = tape_of(x, "scale");
  Tensor4 y(x.value().shape(), x.value().vec() * factor);
  return t.record(std::move(y), {x}, [x, factor](Tape& tp, const Tensor4& gy) {
    if (Tensor4* gx = tp.grad_sink(x)) gx->vec() += gy.vec() * factor;
  });
}

Var concat_c(std::span<const Var> parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concat_c: no operands");
  }
  Tape& t = tape_of(parts.front(), "concat_c");
  const Shape first = parts.front().value().shape();
  int channels = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p, "concat_c");
    const Shape& s = p.value().shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_c: operand " + s.str() + " does not match " + first.str() + " in n, h, w");
    }
    channels += s.c;
  }
  Tensor4 y(Shape{first.n, channels, first.h, first.w});
  const std::size_t hw = first.plane();
  for (int n = 0; n < first.n; ++n) {
    int offset = 0;
    for (const Var& p : parts) {
      const Tensor4& v = p.value();
      std::copy_n(v.plane(n, 0), static_cast<std::size_t>(v.shape().c) * hw, y.plane(n, offset));
      offset += v.shape().c;
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(y), parts, [inputs, hw](Tape& tp, const Tensor4& gy) {
    for (int n = 0; n < gy.shape().n; ++n) {
      int offset = 0;
      for (const Var& p : inputs) {
        const int c = tp.value(p).shape().c;
        if (Tensor4* gp = tp.grad_sink(p)) {
          Eigen::Map<Eigen::VectorXd>(gp->plane(n, 0), static_cast<Eigen::Index>(c * hw)) +=
              Eigen::Map<const Eigen::VectorXd>(gy.plane(n, offset), static_cast<Eigen::Index>(c * hw));
        }
        offset += c;
      }
    }
  });
}

Var concat_c(std::initializer_list<Var> parts) { return concat_c(std::span<const Var>(parts.begin(), parts.size())); }

Var slice_c(Var x, int begin, int count) {
  Tape& t = tape_of(x, "slice_c");
  const Shape s = x.value().shape();
  if (begin < 0 || count < 0 || begin + count > s.c) {
    throw ShapeError("slice_c: channels [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + s.str());
  }
  Tensor4 y(Shape{s.n, count, s.h, s.w});
  const std::size_t len = static_cast<std::size_t>(count) * s.plane();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(x.value().plane(n, begin), len, y.plane(n, 0));
  }
  return t.record(std::move(y), {x}, [x, begin, len](Tape& tp, const Tensor4& gy) {
    Tensor4* gx = tp.grad_sink(x);
    if (!gx) return;
    for (int n = 0; n < gy.shape().n; ++n) {
      Eigen::Map<Eigen::VectorXd>(gx->plane(n, begin), static_cast<Eigen::Index>(len)) +=
          Eigen::Map<const Eigen::VectorXd>(gy.plane(n, 0), static_cast<Eigen::Index>(len));
    }
  });
}

Var channel_scale(Var x, Var s) {
  Tape& t = tape_of(x, "channel_scale");
  require_same_tape(x, s, "channel_scale");
  const Shape xs = x.value().shape();
  const Shape ss = s.value().shape();
  if (ss.n != xs.n || ss.c != xs.c || ss.h != 1 || ss.w != 1) {
    throw ShapeError("channel_scale: scale " + ss.str() + " incompatible with " + xs.str());
  }
  const auto hw = static_cast<Eigen::Index>(xs.plane());
  Tensor4 y(xs);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      Eigen::Map<Eigen::ArrayXd>(y.plane(n, c), hw) =
          Eigen::Map<const Eigen::ArrayXd>(x.value().plane(n, c), hw) * s.value()(n, c, 0, 0);
    }
  }
  return t.record(std::move(y), {x, s}, [x, s, hw](Tape& tp, const Tensor4& gy) {
    Tensor4* gx = tp.grad_sink(x);
    Tensor4* gs = tp.grad_sink(s);
    const Shape& shp = gy.shape();
    for (int n = 0; n < shp.n; ++n) {
      for (int c = 0; c < shp.c; ++c) {
        Eigen::Map<const Eigen::ArrayXd> g(gy.plane(n, c), hw);
        if (gx) Eigen::Map<Eigen::ArrayXd>(gx->plane(n, c), hw) += g * tp.value(s)(n, c, 0, 0);
        if (gs) (*gs)(n, c, 0, 0) += (g * Eigen::Map<const Eigen::ArrayXd>(tp.value(x).plane(n, c), hw)).sum();
      }
    }
  });
}

Var sum(Var x) {
  Tape& t = tape_of(x, "sum");
  Tensor4 y(Shape{1, 1, 1, 1}, x.value().vec().sum());
  return t.record(std::move(y), {x}, [x](Tape& tp, const Tensor4& gy) {
    if (Tensor4* gx = tp.grad_sink(x)) gx->vec().array() += gy[0];
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().numel());
  return scale(sum(x), 1.0 / n);
}

} // namespace changer
