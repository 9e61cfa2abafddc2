#include <cmath>

#include "changer/autodiff.hpp"
#include "changer/kernels.hpp"
#include "support.hpp"

using namespace changer;
namespace k = changer::kernels;

TEST_CASE("tensor storage") {
  Tensor4 t(Shape{2, 3, 4, 5}, 1.5);
  CHECK(t.numel() == 120);
  CHECK(t.vec().size() == 120);
  t(1, 2, 3, 4) = 7.0;
  CHECK(t[t.numel() - 1] == 7.0);
  CHECK(t.index(1, 0, 0, 0) == 60);
  CHECK(t.all_finite());
  t[0] = std::nan("");
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(Tensor4(Shape{1, 1, 2, 2}, Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST_CASE("parameters keep insertion order and unique names") {
  Parameters p;
  CHECK(p.add("b", Tensor4(Shape{1, 2, 1, 1})) == 0);
  CHECK(p.add("a", Tensor4(Shape{1, 3, 1, 1})) == 1);
  CHECK(p[0].name == "b");
  CHECK(p.index_of("a") == 1);
  CHECK(p.count() == 5);
  CHECK_THROWS(p.add("a", Tensor4(Shape{1, 1, 1, 1})));
  for (const ParamEntry& e : p) CHECK(e.grad.shape() == e.value.shape());
}

TEST_CASE("conv2d: identity 1x1 kernel returns the input") {
  Rng rng(1);
  const Tensor4 x = test::random({1, 4, 8, 8}, rng);
  Tensor4 w(Shape{4, 4, 1, 1});
  for (int i = 0; i < 4; ++i) w(i, i, 0, 0) = 1.0;
  const Tensor4 b(Shape{1, 4, 1, 1});
  CHECK(k::conv2d(x, w, &b, {}).bitwise_equal(x));
}

TEST_CASE("conv2d: ones kernel over ones counts the covered taps") {
  const Tensor4 x(Shape{1, 1, 3, 3}, 1.0);
  const Tensor4 w(Shape{1, 1, 3, 3}, 1.0);
  const Tensor4 y = k::conv2d(x, w, nullptr, {1, 1, 1});
  CHECK(y(0, 0, 1, 1) == 9.0);
  for (auto [i, j] : {std::pair{0, 0}, {0, 2}, {2, 0}, {2, 2}}) CHECK(y(0, 0, i, j) == 4.0);
  for (auto [i, j] : {std::pair{0, 1}, {1, 0}, {1, 2}, {2, 1}}) CHECK(y(0, 0, i, j) == 6.0);
}

TEST_CASE("conv2d: output shape") {
  CHECK(k::conv_output_shape({2, 16, 32, 32}, {32, 16, 3, 3}, {2, 1, 1}) == Shape{2, 32, 16, 16});
  CHECK(k::conv_output_shape({1, 3, 64, 64}, {16, 3, 7, 7}, {2, 3, 1}) == Shape{1, 16, 32, 32});
}

TEST_CASE("conv2d: rejects bad shapes") {
  const Tensor4 x(Shape{1, 4, 5, 5});
  CHECK_THROWS_AS(k::conv2d(x, Tensor4(Shape{2, 3, 3, 3}), nullptr, {}), ShapeError);
  CHECK_THROWS_AS(k::conv2d(x, Tensor4(Shape{2, 2, 3, 3}), nullptr, {1, 0, 3}), ShapeError);
  CHECK_THROWS_AS(k::conv2d(x, Tensor4(Shape{2, 4, 7, 7}), nullptr, {}), ShapeError);
  const Tensor4 bad_bias(Shape{1, 3, 1, 1});
  CHECK_THROWS_AS(k::conv2d(x, Tensor4(Shape{2, 4, 3, 3}), &bad_bias, {}), ShapeError);
}

TEST_CASE("conv2d: depthwise unit kernel is the identity") {
  Rng rng(2);
  const Tensor4 x = test::random({2, 6, 5, 5}, rng);
  const Tensor4 w(Shape{6, 1, 1, 1}, 1.0);
  CHECK(k::conv2d(x, w, nullptr, {1, 0, 6}).bitwise_equal(x));
}

TEST_CASE("conv2d: GEMM path agrees with the direct loops") {
  Rng rng(3);
  struct Geo {
    Shape x, w;
    k::ConvGeometry g;
  };
  for (const Geo& c : {Geo{{2, 3, 9, 9}, {5, 3, 3, 3}, {2, 1, 1}}, Geo{{1, 4, 6, 7}, {6, 2, 3, 3}, {1, 1, 2}},
                       Geo{{1, 4, 6, 6}, {4, 1, 3, 3}, {1, 1, 4}}, Geo{{2, 8, 4, 4}, {3, 8, 1, 1}, {1, 0, 1}},
                       Geo{{1, 3, 16, 16}, {8, 3, 7, 7}, {2, 3, 1}}}) {
    const Tensor4 x = test::random(c.x, rng);
    const Tensor4 w = test::random(c.w, rng);
    const Tensor4 b = test::random({1, c.w.n, 1, 1}, rng);
    const Tensor4 fast = k::conv2d(x, w, &b, c.g);
    const Tensor4 ref = k::conv2d_direct(x, w, &b, c.g);
    CHECK(test::max_abs_diff(fast, ref) <= 1e-12 * (1.0 + ref.vec().cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("conv2d MACs follow n*c_out*h_out*w_out*(c_in/groups)*k^2") {
  CHECK(k::conv2d_macs({2, 16, 32, 32}, {32, 16, 3, 3}, {2, 1, 1}) == 2ull * 32 * 16 * 16 * 16 * 9);
  CHECK(k::conv2d_macs({1, 8, 4, 4}, {8, 1, 3, 3}, {1, 1, 8}) == 8ull * 16 * 9);
}

TEST_CASE("activations") {
  Tape t;
  const Var zero = t.constant(Tensor4(Shape{1, 1, 1, 1}));
  CHECK(sigmoid(zero).value()[0] == 0.5);
  CHECK(gelu(zero).value()[0] == 0.0);
  CHECK(relu(zero).value()[0] == 0.0);
  const double s = sigmoid(t.constant(Tensor4(Shape{1, 1, 1, 1}, -50.0))).value()[0];
  CHECK(s > 0.0);
  CHECK(s < 1e-20);
  CHECK(sigmoid(t.constant(Tensor4(Shape{1, 1, 1, 1}, 800.0))).value()[0] == 1.0);
  CHECK(sigmoid(t.constant(Tensor4(Shape{1, 1, 1, 1}, -800.0))).value().all_finite());
  // GELU(x) = x * Phi(x)
  CHECK(gelu(t.constant(Tensor4(Shape{1, 1, 1, 1}, 1.0))).value()[0] == doctest::Approx(0.8413447460685429));
}

TEST_CASE("instance_norm") {
  const Tensor4 one(Shape{1, 1, 1, 1}, 1.0), zero(Shape{1, 1, 1, 1});
  SUBCASE("constant plane maps to beta") {
    const auto r = k::instance_norm(Tensor4(Shape{1, 1, 3, 3}, 4.2), one, zero, 1e-5);
    for (std::size_t i = 0; i < 9; ++i) CHECK(r.out[i] == 0.0);
  }
  SUBCASE("{1,2,3,4} standardises to population std 1") {
    const Tensor4 x = test::iota({1, 1, 2, 2}, 1.0);
    const auto r = k::instance_norm(x, one, zero, 1e-300);
    const double sd = std::sqrt(1.25);
    for (int i = 0; i < 4; ++i) CHECK(r.out[static_cast<std::size_t>(i)] == doctest::Approx((i + 1 - 2.5) / sd));
  }
  SUBCASE("affine contract") {
    Rng rng(4);
    const Tensor4 x = test::random({2, 1, 5, 5}, rng);
    const auto r = k::instance_norm(x, Tensor4(Shape{1, 1, 1, 1}, 2.0), Tensor4(Shape{1, 1, 1, 1}, 3.0), 1e-12);
    for (int n = 0; n < 2; ++n) {
      Eigen::Map<const Eigen::ArrayXd> plane(r.out.plane(n, 0), 25);
      CHECK(plane.mean() == doctest::Approx(3.0));
      CHECK(std::sqrt((plane - plane.mean()).square().mean()) == doctest::Approx(2.0));
    }
  }
}

TEST_CASE("global_avg_pool") {
  CHECK(k::global_avg_pool(Tensor4(Shape{1, 2, 3, 3}, 0.7))(0, 1, 0, 0) == doctest::Approx(0.7));
  CHECK(k::global_avg_pool(test::iota({1, 1, 2, 2}))[0] == 1.5);
  Tape t;
  const Var x = t.variable(Tensor4(Shape{1, 2, 3, 4}));
  t.backward(sum(global_avg_pool(x)));
  for (std::size_t i = 0; i < 24; ++i) CHECK(t.grad(x)[i] == doctest::Approx(1.0 / 12.0));
}

TEST_CASE("max_pool2d") {
  const Tensor4 x = test::iota({1, 1, 4, 4});
  const auto r = k::max_pool2d(x, 3, 2, 1);
  CHECK(r.out.shape() == Shape{1, 1, 2, 2});
  CHECK(r.out(0, 0, 0, 0) == 5.0);
  CHECK(r.out(0, 0, 1, 1) == 15.0);
}

// Independent half-pixel bilinear reference for one output pixel.
double upsample_oracle(const Tensor4& x, int factor, int i, int j) {
  const auto src = [&](int o, int len) {
    const double s = std::max(0.0, (o + 0.5) / factor - 0.5);
    const int lo = std::min(static_cast<int>(std::floor(s)), len - 1);
    const int hi = std::min(lo + 1, len - 1);
    return std::tuple{lo, hi, s - lo};
  };
  const auto [r0, r1, fr] = src(i, x.shape().h);
  const auto [c0, c1, fc] = src(j, x.shape().w);
  return (1 - fr) * ((1 - fc) * x(0, 0, r0, c0) + fc * x(0, 0, r0, c1)) +
         fr * ((1 - fc) * x(0, 0, r1, c0) + fc * x(0, 0, r1, c1));
}

TEST_CASE("bilinear_upsample") {
  Rng rng(5);
  const Tensor4 x = test::random({2, 3, 4, 5}, rng);
  CHECK(k::bilinear_upsample(x, 1).bitwise_equal(x));
  const Tensor4 c = k::bilinear_upsample(Tensor4(Shape{1, 2, 3, 3}, 0.25), 4);
  CHECK(c.shape() == Shape{1, 2, 12, 12});
  for (std::size_t i = 0; i < c.numel(); ++i) CHECK(c[i] == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor4 q = test::iota({1, 1, 2, 2});
  const Tensor4 up = k::bilinear_upsample(q, 2);
  double centre = 0.0;
  for (int i = 1; i <= 2; ++i) {
    for (int j = 1; j <= 2; ++j) centre += up(0, 0, i, j) / 4.0;
  }
  CHECK(centre == doctest::Approx(1.5));
  CHECK(up(0, 0, 1, 1) == doctest::Approx(0.75));
  CHECK(up(0, 0, 1, 2) == doctest::Approx(1.25));
  const Tensor4 r = test::random({1, 1, 3, 5}, rng);
  const Tensor4 ur = k::bilinear_upsample(r, 4);
  for (int i = 0; i < 12; ++i) {
    for (int j = 0; j < 20; ++j) CHECK(ur(0, 0, i, j) == doctest::Approx(upsample_oracle(r, 4, i, j)));
  }
}

TEST_CASE("grid_sample") {
  Rng rng(6);
  const Tensor4 x = test::random({2, 3, 5, 6}, rng);
  SUBCASE("zero flow is bitwise identity") {
    CHECK(k::grid_sample(x, Tensor4(Shape{2, 2, 5, 6})).bitwise_equal(x));
  }
  SUBCASE("unit column flow shifts with edge clamping") {
    Tensor4 flow(Shape{2, 2, 5, 6});
    for (int n = 0; n < 2; ++n) std::fill_n(flow.plane(n, 0), 30, 1.0);
    const Tensor4 y = k::grid_sample(x, flow);
    for (int n = 0; n < 2; ++n) {
      for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 5; ++i) {
          for (int j = 0; j < 6; ++j) CHECK(y(n, c, i, j) == x(n, c, i, std::min(j + 1, 5)));
        }
      }
    }
  }
  SUBCASE("half-pixel corner offset averages the 2x2 plane") {
    Tensor4 flow(Shape{1, 2, 2, 2}, 0.5);
    CHECK(k::grid_sample(test::iota({1, 1, 2, 2}), flow)(0, 0, 0, 0) == 1.5);
  }
  SUBCASE("flow must match the spatial size") {
    CHECK_THROWS_AS(k::grid_sample(x, Tensor4(Shape{2, 2, 5, 5})), ShapeError);
  }
}

TEST_CASE("elementwise and channel ops") {
  Tape t;
  Rng rng(7);
  const Var x = t.constant(test::random({1, 3, 2, 2}, rng));
  for (std::size_t i = 0; i < 12; ++i) CHECK((x - x).value()[i] == 0.0);

  Tensor4 a(Shape{1, 2, 1, 1}), b(Shape{1, 2, 1, 1});
  a[0] = 1, a[1] = 2, b[0] = 10, b[1] = 20;
  const Tensor4 s = add(t.constant(a), t.constant(b)).value();
  CHECK(s[0] == 11.0);
  CHECK(s[1] == 22.0);

  const Var p = t.constant(test::random({1, 3, 4, 4}, rng));
  const Var q = t.constant(test::random({1, 5, 4, 4}, rng));
  const Var cat = concat_c({p, q});
  CHECK(cat.shape() == Shape{1, 8, 4, 4});
  CHECK(slice_c(cat, 0, 3).value().bitwise_equal(p.value()));
  CHECK(slice_c(cat, 3, 5).value().bitwise_equal(q.value()));
  CHECK_THROWS_AS(add(p, q), ShapeError);
  CHECK_THROWS_AS(concat_c({p, t.constant(Tensor4(Shape{1, 1, 3, 4}))}), ShapeError);
  CHECK_THROWS_AS(slice_c(cat, 6, 3), ShapeError);
}

TEST_CASE("backward") {
  Rng rng(8);
  const Tensor4 xv = test::random({1, 2, 3, 3}, rng);
  SUBCASE("sum gives ones") {
    Tape t;
    const Var x = t.variable(xv);
    t.backward(sum(x));
    for (std::size_t i = 0; i < xv.numel(); ++i) CHECK(t.grad(x)[i] == 1.0);
  }
  SUBCASE("half sum of squares gives x") {
    Tape t;
    const Var x = t.variable(xv);
    t.backward(scale(sum(x * x), 0.5));
    CHECK(t.grad(x).bitwise_equal(xv));
  }
  SUBCASE("parameter gradients accumulate across calls") {
    Parameters params;
    params.add("x", xv);
    for (int rep = 0; rep < 2; ++rep) {
      Tape t;
      t.backward(sum(t.param(params[0])));
    }
    for (std::size_t i = 0; i < xv.numel(); ++i) CHECK(params[0].grad[i] == 2.0);
  }
  SUBCASE("shared leaf sums its paths") {
    Parameters params;
    params.add("x", xv);
    Tape t;
    const Var a = t.param(params[0]);
    const Var b = t.param(params[0]);
    CHECK(a.id == b.id);
    t.backward(sum(a + b));
    for (std::size_t i = 0; i < xv.numel(); ++i) CHECK(params[0].grad[i] == 2.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape t;
    CHECK_THROWS_AS(t.backward(t.variable(xv)), ShapeError);
  }
}

TEST_CASE("forward ops are pure") {
  Rng rng(9);
  const Tensor4 x = test::random({1, 4, 8, 8}, rng);
  const Tensor4 w = test::random({6, 2, 3, 3}, rng);
  const Tensor4 flow = test::random({1, 2, 8, 8}, rng, -2.0, 2.0);
  CHECK(k::conv2d(x, w, nullptr, {1, 1, 2}).bitwise_equal(k::conv2d(x, w, nullptr, {1, 1, 2})));
  CHECK(k::grid_sample(x, flow).bitwise_equal(k::grid_sample(x, flow)));
  CHECK(k::bilinear_upsample(x, 4).bitwise_equal(k::bilinear_upsample(x, 4)));
}
