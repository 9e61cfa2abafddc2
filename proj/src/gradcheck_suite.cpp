#include "changer/gradcheck_suite.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "changer/fusion.hpp"
#include "changer/interact.hpp"
#include "changer/model.hpp"
#include "changer/train.hpp"

namespace changer {

namespace {

Tensor4 random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor4 t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Fixed random projection to a scalar, so every output coordinate carries a
// distinct weight in the loss.
Var project(Tape& tape, Var out, std::uint64_t salt) {
  Rng rng(0x70726f6a, salt);
  return sum(out * tape.constant(random_tensor(out.shape(), rng)));
}

// Flow values whose fractional part stays clear of the bilinear cell edges.
Tensor4 jittered_flow(const Shape& s, Rng& rng, int reach) {
  Tensor4 t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double frac = rng.uniform(0.1, 0.9);
    t[i] = static_cast<double>(rng.uniform_int(-reach, reach - 1)) + frac;
  }
  return t;
}

struct Instance {
  Parameters own;
  std::shared_ptr<ChangerModel> model; // when set, its parameters are checked
  LossFn loss;

  Parameters& params() { return model ? model->params() : own; }
};

// FNV-1a, so per-case streams do not depend on std::hash
std::uint64_t name_stream(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

using Builder = std::function<std::shared_ptr<Instance>(Rng&)>;

GradCheckCase make_case(std::string name, std::string module, double tol, int probes, Builder build) {
  GradCheckCase c;
  c.name = std::move(name);
  c.module = std::move(module);
  c.tol = tol;
  c.probes_per_leaf = probes;
  c.run = [build = std::move(build), name = c.name](const GradCheckOptions& options) {
    Rng rng(options.seed, name_stream(name));
    const std::shared_ptr<Instance> inst = build(rng);
    return grad_check(inst->loss, inst->params(), options);
  };
  return c;
}

// Leaves named x, w, b, ... registered from shapes, then a loss over them.
Builder leaves(std::vector<std::pair<std::string, Shape>> shapes,
               std::function<Var(Tape&, std::vector<Var>&)> body) {
  return [shapes = std::move(shapes), body = std::move(body)](Rng& rng) {
    auto inst = std::make_shared<Instance>();
    for (const auto& [name, shape] : shapes) inst->own.add(name, random_tensor(shape, rng));
    inst->loss = [body](Tape& tape, Parameters& p) {
      std::vector<Var> v;
      for (ParamEntry& e : p) v.push_back(tape.param(e));
      return body(tape, v);
    };
    return inst;
  };
}

Builder conv_case(Shape x, Shape w, int stride, int pad, int groups) {
  return leaves({{"x", x}, {"w", w}, {"b", Shape{1, w.n, 1, 1}}}, [=](Tape& t, std::vector<Var>& v) {
    return project(t, conv2d(v[0], v[1], v[2], stride, pad, groups), 1);
  });
}

Builder model_case(Variant variant) {
  return [variant](Rng& rng) {
    auto inst = std::make_shared<Instance>();
    inst->model = std::make_shared<ChangerModel>(ModelConfig::preset(variant, {8, 8, 8, 8}, 8), rng.bits());
    Parameters& p = inst->model->params();
    if (p.contains("head.fdaf.flow.pw.weight")) {
      // away from zero flow, whose integer sample points sit on cell edges
      Tensor4& pw = p.at("head.fdaf.flow.pw.weight").value;
      pw = random_tensor(pw.shape(), rng, -0.5, 0.5);
      Tensor4& pb = p.at("head.fdaf.flow.pw.bias").value;
      pb = random_tensor(pb.shape(), rng, -0.4, 0.4);
    }
    // at 32x32 the last stage is 1x1, where a norm outputs exactly beta; a zero
    // beta would park the following ReLU on its kink
    for (ParamEntry& e : p) {
      const bool is_gamma = e.name.ends_with(".gamma");
      if (is_gamma || e.name.ends_with(".beta")) {
        e.value = random_tensor(e.value.shape(), rng, is_gamma ? 0.5 : -0.5, is_gamma ? 1.5 : 0.5);
      }
    }
    p.add("probe.x0", random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0));
    p.add("probe.x1", random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0));
    ChangerModel* model = inst->model.get();
    inst->loss = [model](Tape& t, Parameters& q) {
      return project(t, model->forward(t, t.param(q.at("probe.x0")), t.param(q.at("probe.x1"))), 2);
    };
    return inst;
  };
}

std::vector<GradCheckCase> build_cases() {
  std::vector<GradCheckCase> cases;
  const auto add = [&](std::string name, std::string module, double tol, int probes, Builder b) {
    cases.push_back(make_case(std::move(name), std::move(module), tol, probes, std::move(b)));
  };

  add("conv_dense", "tensor", 1e-6, 24, conv_case({2, 3, 7, 7}, {4, 3, 3, 3}, 2, 1, 1));
  add("conv_grouped", "tensor", 1e-6, 24, conv_case({1, 4, 6, 6}, {6, 2, 3, 3}, 1, 1, 2));
  add("conv_depthwise", "tensor", 1e-6, 24, conv_case({1, 4, 6, 6}, {4, 1, 3, 3}, 1, 1, 4));
  add("conv_linear", "tensor", 1e-6, 24, conv_case({2, 5, 4, 4}, {3, 5, 1, 1}, 1, 0, 1));
  add("sigmoid", "tensor", 1e-6, 24,
      leaves({{"x", {1, 4, 3, 3}}, {"w", {3, 4, 1, 1}}}, [](Tape&, std::vector<Var>& v) {
        return sum(sigmoid(conv2d(v[0], v[1], 1, 0)));
      }));
  add("gelu", "tensor", 1e-6, 24, leaves({{"x", {1, 3, 4, 4}}}, [](Tape& t, std::vector<Var>& v) {
        return project(t, gelu(scale(v[0], 3.0)), 3);
      }));
  add("relu", "tensor", 1e-6, 24, leaves({{"x", {1, 3, 4, 4}}}, [](Tape& t, std::vector<Var>& v) {
        return project(t, relu(v[0]), 4);
      }));
  add("instance_norm", "tensor", 1e-6, 24,
      leaves({{"x", {2, 3, 4, 4}}, {"gamma", {1, 3, 1, 1}}, {"beta", {1, 3, 1, 1}}},
             [](Tape& t, std::vector<Var>& v) { return project(t, instance_norm(v[0], v[1], v[2]), 5); }));
  add("global_avg_pool", "tensor", 1e-6, 24, leaves({{"x", {2, 3, 3, 5}}}, [](Tape& t, std::vector<Var>& v) {
        return project(t, global_avg_pool(v[0]), 6);
      }));
  add("max_pool", "tensor", 1e-6, 24, leaves({{"x", {1, 2, 7, 7}}}, [](Tape& t, std::vector<Var>& v) {
        return project(t, max_pool2d(v[0], 3, 2, 1), 7);
      }));
  add("bilinear_upsample", "tensor", 1e-6, 24, leaves({{"x", {1, 2, 3, 4}}}, [](Tape& t, std::vector<Var>& v) {
        return project(t, bilinear_upsample(v[0], 4), 8);
      }));
  add("grid_sample", "tensor", 1e-4, 32, [](Rng& rng) {
    auto inst = std::make_shared<Instance>();
    inst->own.add("x", random_tensor({1, 3, 6, 6}, rng));
    inst->own.add("flow", jittered_flow({1, 2, 6, 6}, rng, 2));
    inst->loss = [](Tape& t, Parameters& p) {
      return project(t, grid_sample(t.param(p[0]), t.param(p[1])), 9);
    };
    return inst;
  });
  add("elementwise", "tensor", 1e-6, 24,
      leaves({{"a", {1, 2, 3, 3}}, {"b", {1, 2, 3, 3}}}, [](Tape& t, std::vector<Var>& v) {
        return project(t, (v[0] + v[1]) * (v[0] - v[1]) * v[1], 10) + mean(scale(v[0], -2.5));
      }));
  add("concat_slice", "tensor", 1e-6, 24,
      leaves({{"a", {1, 2, 3, 3}}, {"b", {1, 3, 3, 3}}}, [](Tape& t, std::vector<Var>& v) {
        const Var c = concat_c({v[0], v[1]});
        return project(t, slice_c(c, 1, 3) * slice_c(c, 2, 3), 11);
      }));
  add("channel_scale", "tensor", 1e-6, 24,
      leaves({{"x", {2, 3, 3, 3}}, {"s", {2, 3, 1, 1}}}, [](Tape& t, std::vector<Var>& v) {
        return project(t, channel_scale(v[0], v[1]), 12);
      }));

  add("exchange_channel", "interact", 1e-6, 24,
      leaves({{"x0", {2, 5, 3, 3}}, {"x1", {2, 5, 3, 3}}}, [](Tape& t, std::vector<Var>& v) {
        const auto [o0, o1] = exchange(v[0], v[1], make_channel_mask(5, 2));
        return project(t, o0, 13) + project(t, o1 * o1, 14);
      }));
  add("exchange_spatial", "interact", 1e-6, 24,
      leaves({{"x0", {1, 3, 3, 8}}, {"x1", {1, 3, 3, 8}}}, [](Tape& t, std::vector<Var>& v) {
        const auto [o0, o1] = exchange(v[0], v[1], make_spatial_mask(8, 2, 2));
        return project(t, o0, 15) + project(t, o1 * o1, 16);
      }));
  add("ad", "interact", 1e-6, 24, [](Rng& rng) {
    auto inst = std::make_shared<Instance>();
    const auto layer = ADLayer::create(inst->own, "ad", 8, 4, rng);
    inst->own.add("x0", random_tensor({2, 8, 3, 3}, rng));
    inst->own.add("x1", random_tensor({2, 8, 3, 3}, rng));
    inst->loss = [layer](Tape& t, Parameters& p) {
      const auto out = layer.forward(t, p, t.param(p.at("x0")), t.param(p.at("x1")));
      return project(t, out.out0, 17) + project(t, out.out1, 18);
    };
    return inst;
  });

  const auto fdaf_instance = [](Rng& rng) {
    auto inst = std::make_shared<Instance>();
    const auto layer = FDAFLayer::create(inst->own, "fdaf", 4, rng);
    Tensor4& pw = inst->own.at("fdaf.flow.pw.weight").value;
    pw = random_tensor(pw.shape(), rng, -0.6, 0.6);
    inst->own.add("x0", random_tensor({1, 4, 8, 8}, rng));
    inst->own.add("x1", random_tensor({1, 4, 8, 8}, rng));
    return std::make_pair(inst, layer);
  };
  add("flow_net", "fusion", 1e-6, 24, [fdaf_instance](Rng& rng) {
    auto [inst, layer] = fdaf_instance(rng);
    inst->loss = [layer](Tape& t, Parameters& p) {
      const auto f = layer.flow_net(t, p, t.param(p.at("x0")), t.param(p.at("x1")));
      return project(t, f.flow0, 19) + project(t, f.flow1, 20);
    };
    return inst;
  });
  add("fdaf", "fusion", 1e-4, 24, [fdaf_instance](Rng& rng) {
    auto [inst, layer] = fdaf_instance(rng);
    inst->loss = [layer](Tape& t, Parameters& p) {
      return project(t, layer.fuse(t, p, t.param(p.at("x0")), t.param(p.at("x1"))), 21);
    };
    return inst;
  });
  add("concat_fuse", "fusion", 1e-6, 24,
      leaves({{"x0", {1, 2, 3, 3}}, {"x1", {1, 2, 3, 3}}}, [](Tape& t, std::vector<Var>& v) {
        return project(t, concat_fuse(v[0], v[1]), 22);
      }));

  add("decoder", "model", 1e-6, 12, [](Rng& rng) {
    auto inst = std::make_shared<Instance>();
    inst->model = std::make_shared<ChangerModel>(ModelConfig::preset(Variant::Vanilla, {4, 4, 4, 4}, 4), rng.bits());
    Parameters& p = inst->model->params();
    for (int i = 0; i < 4; ++i) p.add("probe.level" + std::to_string(i + 1), random_tensor({1, 4, 8 >> i, 8 >> i}, rng));
    ChangerModel* model = inst->model.get();
    inst->loss = [model](Tape& t, Parameters& q) {
      Pyramid pyr;
      for (int i = 0; i < 4; ++i) pyr[static_cast<std::size_t>(i)] = t.param(q.at("probe.level" + std::to_string(i + 1)));
      return project(t, model->decode(t, pyr), 23);
    };
    return inst;
  });
  // whole networks hold many ReLU and max-pool kinks; a short step rarely straddles one
  for (Variant v : {Variant::Vanilla, Variant::Align, Variant::AD, Variant::Ex}) {
    add("model_" + to_string(v), "model", 1e-4, 8, model_case(v));
    cases.back().eps = 1e-6;
  }

  add("ce_loss", "train", 1e-6, 24, [](Rng& rng) {
    auto inst = std::make_shared<Instance>();
    inst->own.add("logits", random_tensor({2, 2, 3, 3}, rng, -3.0, 3.0));
    std::vector<std::uint8_t> labels(18);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    inst->loss = [labels](Tape& t, Parameters& q) { return ce_loss(t.param(q[0]), labels); };
    return inst;
  });
  return cases;
}

} // namespace

const std::vector<GradCheckCase>& gradcheck_cases() {
  static const std::vector<GradCheckCase> cases = build_cases();
  return cases;
}

std::vector<const GradCheckCase*> select_gradcheck_cases(const std::string& scope) {
  std::vector<const GradCheckCase*> out;
  for (const GradCheckCase& c : gradcheck_cases()) {
    if (scope == "all" || c.module == scope || c.name == scope) out.push_back(&c);
  }
  if (out.empty()) {
    throw std::invalid_argument("unknown gradcheck scope '" + scope + "'");
  }
  return out;
}

} // namespace changer
