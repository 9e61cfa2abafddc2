#include <set>

#include "changer/model.hpp"
#include "support.hpp"

using namespace changer;

namespace {

std::pair<Tensor4, Tensor4> images(const Shape& s, std::uint64_t seed) {
  Rng rng(seed);
  return {test::random(s, rng, 0.0, 1.0), test::random(s, rng, 0.0, 1.0)};
}

std::size_t count_prefixed(const Parameters& p, const std::string& prefix) {
  std::size_t n = 0;
  for (const ParamEntry& e : p) {
    if (e.name.rfind(prefix, 0) == 0) n += e.value.numel();
  }
  return n;
}

} // namespace

TEST_CASE("variant table") {
  const auto kinds = [](const ModelConfig& c) {
    std::vector<InteractKind> k;
    for (const StageSpec& s : c.stages) k.push_back(s.interact.kind);
    return k;
  };
  using K = InteractKind;
  const ModelConfig vanilla = ModelConfig::preset(Variant::Vanilla);
  CHECK(kinds(vanilla) == std::vector{K::None, K::None, K::None, K::None});
  CHECK(vanilla.fusion == FusionKind::Concat);
  const ModelConfig align = ModelConfig::preset(Variant::Align);
  CHECK(kinds(align) == std::vector{K::None, K::None, K::None, K::None});
  CHECK(align.fusion == FusionKind::FDAF);
  const ModelConfig ad = ModelConfig::preset(Variant::AD);
  CHECK(kinds(ad) == std::vector{K::None, K::AD, K::AD, K::AD});
  CHECK(ad.fusion == FusionKind::FDAF);
  const ModelConfig ex = ModelConfig::preset(Variant::Ex);
  CHECK(kinds(ex) == std::vector{K::None, K::SpatialExchange, K::ChannelExchange, K::ChannelExchange});
  CHECK(ex.stages[1].interact.period == 2);
  CHECK(ex.stages[1].interact.window == 1);
  CHECK(ex.fusion == FusionKind::FDAF);
  for (Variant v : {Variant::Vanilla, Variant::Align, Variant::AD, Variant::Ex}) {
    CHECK(parse_variant(to_string(v)) == v);
    const ModelConfig c = ModelConfig::preset(v);
    CHECK(c.stages[0].stride == 4);
    for (int i = 1; i < 4; ++i) CHECK(c.stages[static_cast<std::size_t>(i)].stride == 2);
  }
}

TEST_CASE("encoder pyramid shapes") {
  ChangerModel m(ModelConfig::preset(Variant::Ex), 1);
  const auto [a, b] = images({2, 3, 64, 64}, 2);
  Tape t;
  const auto [p0, p1] = m.encode(t, t.constant(a), t.constant(b));
  CHECK(p0[0].shape() == Shape{2, 16, 16, 16});
  CHECK(p0[1].shape() == Shape{2, 32, 8, 8});
  CHECK(p0[2].shape() == Shape{2, 64, 4, 4});
  CHECK(p0[3].shape() == Shape{2, 128, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(p1[static_cast<std::size_t>(i)].shape() == p0[static_cast<std::size_t>(i)].shape());
}

TEST_CASE("identical inputs give identical pyramids under exchange schedules") {
  const auto [a, b] = images({1, 3, 64, 64}, 3);
  (void)b;
  for (Variant v : {Variant::Vanilla, Variant::Align, Variant::Ex}) {
    ChangerModel m(ModelConfig::preset(v), 4);
    Tape t;
    const Var x = t.constant(a);
    const auto [p0, p1] = m.encode(t, x, t.constant(a));
    for (int i = 0; i < 4; ++i) {
      CHECK(p0[static_cast<std::size_t>(i)].value().bitwise_equal(p1[static_cast<std::size_t>(i)].value()));
    }
    CHECK(m.decode(t, p0).value().bitwise_equal(m.decode(t, p1).value()));
  }
  // AD re-weights each branch with its own half of the attention vector
  ChangerModel ad(ModelConfig::preset(Variant::AD), 4);
  Tape t;
  const auto [p0, p1] = ad.encode(t, t.constant(a), t.constant(a));
  CHECK(p0[0].value().bitwise_equal(p1[0].value()));
  CHECK_FALSE(p0[1].value().bitwise_equal(p1[1].value()));
}

TEST_CASE("input contract") {
  ChangerModel m(ModelConfig::preset(Variant::Ex), 5);
  Tape t;
  CHECK_THROWS_AS(m.forward(t, t.constant(Tensor4(Shape{1, 3, 48, 64})), t.constant(Tensor4(Shape{1, 3, 48, 64}))),
                  ShapeError);
  CHECK_THROWS_AS(m.forward(t, t.constant(Tensor4(Shape{1, 1, 64, 64})), t.constant(Tensor4(Shape{1, 1, 64, 64}))),
                  ShapeError);
  CHECK_THROWS_AS(m.forward(t, t.constant(Tensor4(Shape{1, 3, 64, 64})), t.constant(Tensor4(Shape{1, 3, 32, 64}))),
                  ShapeError);
  for (const Shape& s : {Shape{1, 3, 32, 32}, Shape{2, 3, 64, 32}, Shape{1, 3, 96, 64}}) {
    const auto [a, b] = images(s, 6);
    CHECK(m.predict(a, b).shape() == Shape{s.n, 2, s.h, s.w});
  }
}

TEST_CASE("decoder output shape") {
  ChangerModel m(ModelConfig::preset(Variant::Vanilla), 7);
  const auto [a, b] = images({3, 3, 64, 64}, 8);
  Tape t;
  const auto [p0, p1] = m.encode(t, t.constant(a), t.constant(b));
  CHECK(m.decode(t, p0).shape() == Shape{3, 32, 16, 16});
}

TEST_CASE("head") {
  ChangerModel m(ModelConfig::preset(Variant::Ex), 9);
  const auto [a, b] = images({1, 3, 64, 64}, 10);
  SUBCASE("fresh FDAF head sees a zero fused tensor for identical features") {
    Tape t;
    const auto [p0, p1] = m.encode(t, t.constant(a), t.constant(a));
    const Var f = m.decode(t, p0);
    CHECK(m.fuse(t, f, m.decode(t, p1)).value().vec().isZero(0.0));
  }
  SUBCASE("zero projection weights give zero logits") {
    for (ParamEntry& e : m.params()) {
      if (e.name.rfind("head.proj", 0) == 0) e.value.vec().setZero();
    }
    const Tensor4 logits = m.predict(a, b);
    CHECK(logits.shape() == Shape{1, 2, 64, 64});
    CHECK(logits.vec().isZero(0.0));
  }
}

TEST_CASE("vanilla fusion is covariant under temporal swap") {
  ChangerModel m(ModelConfig::preset(Variant::Vanilla), 11);
  const auto [a, b] = images({1, 3, 64, 64}, 12);
  Tape t;
  const auto fused = [&](const Tensor4& x0, const Tensor4& x1) {
    const auto [p0, p1] = m.encode(t, t.constant(x0), t.constant(x1));
    return m.fuse(t, m.decode(t, p0), m.decode(t, p1));
  };
  const Var ab = fused(a, b);
  const Var ba = fused(b, a);
  const Var swapped = concat_c({slice_c(ab, 32, 32), slice_c(ab, 0, 32)});
  CHECK(ba.value().bitwise_equal(swapped.value()));
}

TEST_CASE("forward is deterministic") {
  const auto [a, b] = images({2, 3, 64, 64}, 13);
  ChangerModel m1(ModelConfig::preset(Variant::AD), 14);
  ChangerModel m2(ModelConfig::preset(Variant::AD), 14);
  CHECK(m1.predict(a, b).bitwise_equal(m1.predict(a, b)));
  CHECK(m1.predict(a, b).bitwise_equal(m2.predict(a, b)));
}

TEST_CASE("one stored parameter set serves both branches") {
  ChangerModel m(ModelConfig::preset(Variant::Ex), 15);
  std::set<std::string> names;
  for (const ParamEntry& e : m.params()) CHECK(names.insert(e.name).second);
  for (const std::string& n : names) {
    CHECK(n.find("branch") == std::string::npos);
    CHECK(n.find("t1") == std::string::npos);
  }
  const auto [a, b] = images({1, 3, 64, 64}, 16);
  Tape t1;
  const auto [before0, before1] = m.encode(t1, t1.constant(a), t1.constant(a));
  m.params().at("encoder.stem.conv.weight").value[0] += 0.5;
  Tape t2;
  const auto [after0, after1] = m.encode(t2, t2.constant(a), t2.constant(a));
  CHECK_FALSE(after0[0].value().bitwise_equal(before0[0].value()));
  CHECK(after0[0].value().bitwise_equal(after1[0].value()));
}

TEST_CASE("parameter and MAC counts") {
  Parameters p;
  Rng rng(17);
  Conv2d::linear(p, "fc", 4, 8, rng);
  CHECK(param_count(p) == 40);

  ChangerModel vanilla(ModelConfig::preset(Variant::Vanilla), 0), align(ModelConfig::preset(Variant::Align), 0),
      ad(ModelConfig::preset(Variant::AD), 0), ex(ModelConfig::preset(Variant::Ex), 0);
  CHECK(param_count(ex.params()) == param_count(align.params()));
  CHECK(ex.mac_count(2, 64, 64) == align.mac_count(2, 64, 64));
  CHECK(count_prefixed(vanilla.params(), "encoder.") == count_prefixed(ex.params(), "encoder."));
  CHECK(count_prefixed(ex.params(), "interact.") == 0);
  // stages 2-4 at widths 32, 64, 128 with r = 4
  CHECK(count_prefixed(ad.params(), "interact.") == (32 * 8 + 8 + 8 * 64 + 64) + 3216 + (128 * 32 + 32 + 32 * 256 + 256));
  CHECK(mac_count(ModelConfig::preset(Variant::Ex), 1, 64, 64) == ex.mac_count(1, 64, 64));
}

TEST_CASE("analytic MAC count matches the executed conv audit") {
  for (Variant v : {Variant::Vanilla, Variant::Align, Variant::AD, Variant::Ex}) {
    ChangerModel m(ModelConfig::preset(v), 18);
    const auto [a, b] = images({2, 3, 64, 96}, 19);
    audit::reset();
    m.predict(a, b);
    CHECK(audit::macs() == m.mac_count(2, 64, 96));
  }
}
