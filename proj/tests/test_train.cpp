#include <algorithm>
#include <cmath>
#include <sstream>

#include "changer/train.hpp"
#include "support.hpp"

using namespace changer;

TEST_CASE("cross-entropy") {
  Tape t;
  const std::vector<std::uint8_t> labels{0, 1, 1, 0, 1, 0};
  CHECK(ce_loss(t.constant(Tensor4(Shape{1, 2, 2, 3})), labels).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Tensor4 z(Shape{1, 2, 1, 1});
  z[1] = 20.0;
  const double l = ce_loss(t.constant(z), std::vector<std::uint8_t>{1}).value()[0];
  CHECK(l == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
  CHECK(l == doctest::Approx(2.061153618e-9).epsilon(1e-6));

  Tensor4 big(Shape{1, 2, 1, 1});
  big[0] = 800.0;
  CHECK(ce_loss(t.constant(big), std::vector<std::uint8_t>{1}).value()[0] == doctest::Approx(800.0));

  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor4 r = test::random({2, 2, 3, 3}, rng, -30.0, 30.0);
    std::vector<std::uint8_t> y(18);
    for (auto& v : y) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    CHECK(ce_loss(t.constant(r), y).value()[0] >= 0.0);
  }
  CHECK_THROWS_AS(ce_loss(t.constant(z), std::vector<std::uint8_t>{2}), std::invalid_argument);
  CHECK_THROWS_AS(ce_loss(t.constant(z), std::vector<std::uint8_t>{1, 0}), ShapeError);
}

TEST_CASE("AdamW first step on a scalar") {
  Parameters p;
  p.add("theta", Tensor4(Shape{1, 1, 1, 1}, 1.0));
  p[0].grad = Tensor4(Shape{1, 1, 1, 1}, 1.0);
  AdamW opt(AdamWOptions{0.9, 0.999, 1e-8, 0.05});
  const double lr = 1e-3;
  opt.step(p, lr);
  CHECK(p[0].value[0] == doctest::Approx(1.0 - lr - lr * 0.05).epsilon(1e-9));
}

TEST_CASE("AdamW decay cases") {
  Rng rng(52);
  Parameters p;
  p.add("w", test::random({1, 2, 2, 2}, rng));
  p.add("b", test::random({1, 2, 1, 1}, rng), false);
  const Tensor4 w0 = p[0].value, b0 = p[1].value;
  SUBCASE("zero grads without decay leave parameters alone") {
    AdamW opt(AdamWOptions{0.9, 0.999, 1e-8, 0.0});
    p.zero_grad();
    opt.step(p, 0.01);
    CHECK(p[0].value.bitwise_equal(w0));
    CHECK(p[1].value.bitwise_equal(b0));
  }
  SUBCASE("zero grads with decay shrink multiplicatively, except no-decay leaves") {
    AdamW opt(AdamWOptions{0.9, 0.999, 1e-8, 0.05});
    p.zero_grad();
    for (int k = 1; k <= 3; ++k) {
      opt.step(p, 0.01);
      for (std::size_t i = 0; i < w0.numel(); ++i) {
        CHECK(p[0].value[i] == doctest::Approx(w0[i] * std::pow(1.0 - 0.01 * 0.05, k)).epsilon(1e-14));
      }
    }
    CHECK(p[1].value.bitwise_equal(b0));
  }
  SUBCASE("non-finite gradients are rejected without touching parameters") {
    AdamW opt;
    p.zero_grad();
    p[1].grad[0] = std::nan("");
    CHECK_THROWS_AS(opt.step(p, 0.01), NumericError);
    CHECK(p[0].value.bitwise_equal(w0));
    CHECK(opt.steps() == 0);
  }
}

TEST_CASE("AdamW without decay matches a hand-rolled Adam on a quadratic") {
  const double a[5] = {1.0, 2.5, 0.3, 4.0, 0.8};
  const double c[5] = {0.5, -1.0, 2.0, 0.0, -0.3};
  Parameters p;
  p.add("theta", Tensor4(Shape{1, 5, 1, 1}, 1.0));
  AdamW opt(AdamWOptions{0.9, 0.999, 1e-8, 0.0});
  double theta[5] = {1, 1, 1, 1, 1}, m[5] = {}, v[5] = {};
  double worst = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double lr = 0.05;
    for (int i = 0; i < 5; ++i) p[0].grad[static_cast<std::size_t>(i)] = a[i] * (p[0].value[static_cast<std::size_t>(i)] - c[i]);
    opt.step(p, lr);
    for (int i = 0; i < 5; ++i) {
      const double g = a[i] * (theta[i] - c[i]);
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mhat = m[i] / (1.0 - std::pow(0.9, t));
      const double vhat = v[i] / (1.0 - std::pow(0.999, t));
      theta[i] -= lr * mhat / (std::sqrt(vhat) + 1e-8);
      worst = std::max(worst, std::abs(theta[i] - p[0].value[static_cast<std::size_t>(i)]));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("poly schedule") {
  CHECK(poly_lr(0, 2000, 1e-3, 0.9) == 1e-3);
  CHECK(poly_lr(2000, 2000, 1e-3, 0.9) == 0.0);
  CHECK(poly_lr(1000, 2000, 1e-3, 0.9) == doctest::Approx(5.359e-4).epsilon(1e-4));
  double prev = 1.0;
  for (int i = 0; i <= 100; ++i) {
    const double lr = poly_lr(i, 100, 1e-3, 0.9);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(poly_lr(101, 100, 1e-3, 0.9), std::invalid_argument);
}

TEST_CASE("augmentation") {
  const Sample s = synth_sample(3, 7, 64, 0.5);
  Rng rng(53);
  SUBCASE("everything off is the identity") {
    const AugmentConfig off{false, false, 64, false, false};
    const Sample a = augment(s, off, rng);
    CHECK(a.x0.bitwise_equal(s.x0));
    CHECK(a.x1.bitwise_equal(s.x1));
    CHECK(a.y == s.y);
  }
  SUBCASE("temporal swap is an involution and keeps the label") {
    const Sample twice = temporal_swap(temporal_swap(s));
    CHECK(twice.x0.bitwise_equal(s.x0));
    CHECK(twice.x1.bitwise_equal(s.x1));
    const Sample once = temporal_swap(s);
    CHECK(once.x0.bitwise_equal(s.x1));
    CHECK(once.y == s.y);
  }
  SUBCASE("horizontal flip moves labels with pixels") {
    const Sample f = hflip(s);
    for (int i = 0; i < 64; ++i) {
      for (int j = 0; j < 64; ++j) {
        CHECK(f.y[static_cast<std::size_t>(i * 64 + j)] == s.y[static_cast<std::size_t>(i * 64 + 63 - j)]);
        CHECK(f.x0(0, 1, i, j) == s.x0(0, 1, i, 63 - j));
        CHECK(f.x1(0, 2, i, j) == s.x1(0, 2, i, 63 - j));
      }
    }
  }
  SUBCASE("crops share one window and photometric output stays in range") {
    const AugmentConfig cfg{true, true, 32, true, true};
    for (int k = 0; k < 10; ++k) {
      const Sample a = augment(s, cfg, rng);
      CHECK(a.x0.shape() == Shape{1, 3, 32, 32});
      CHECK(a.y.size() == 32u * 32u);
      CHECK(a.x0.vec().minCoeff() >= 0.0);
      CHECK(a.x1.vec().maxCoeff() <= 1.0);
    }
    CHECK_THROWS_AS(augment(s, AugmentConfig{false, true, 96, false, false}, rng), std::invalid_argument);
  }
  SUBCASE("geometry only: label follows the same crop and flips as the images") {
    const AugmentConfig geo{true, true, 48, false, false};
    const Sample a = augment(s, geo, rng);
    // locate the window by brute force on x0, then compare labels
    bool found = false;
    for (int top = 0; top <= 16 && !found; ++top) {
      for (int left = 0; left <= 16 && !found; ++left) {
        for (int fh = 0; fh < 2 && !found; ++fh) {
          for (int fv = 0; fv < 2 && !found; ++fv) {
            bool ok = true;
            for (int i = 0; i < 48 && ok; ++i) {
              for (int j = 0; j < 48 && ok; ++j) {
                const int si = top + (fv ? 47 - i : i);
                const int sj = left + (fh ? 47 - j : j);
                ok = a.x0(0, 0, i, j) == s.x0(0, 0, si, sj) && a.x1(0, 0, i, j) == s.x1(0, 0, si, sj) &&
                     a.y[static_cast<std::size_t>(i * 48 + j)] == s.y[static_cast<std::size_t>(si * 64 + sj)];
              }
            }
            found = ok;
          }
        }
      }
    }
    CHECK(found);
  }
}

TEST_CASE("synthetic data") {
  SUBCASE("difficulty zero has no change and identical images") {
    const Sample s = synth_sample(1, 2, 64, 0.0);
    CHECK(std::all_of(s.y.begin(), s.y.end(), [](std::uint8_t v) { return v == 0; }));
    CHECK(s.x0.bitwise_equal(s.x1));
  }
  SUBCASE("fixed seed reproduces the dataset") {
    const auto a = synth_generate(5, 6, 64, 0.5);
    const auto b = synth_generate(5, 6, 64, 0.5);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].x0.bitwise_equal(b[i].x0));
      CHECK(a[i].x1.bitwise_equal(b[i].x1));
      CHECK(a[i].y == b[i].y);
      CHECK(a[i].id == b[i].id);
    }
    CHECK_FALSE(synth_generate(6, 1, 64, 0.5)[0].x0.bitwise_equal(a[0].x0));
  }
  SUBCASE("change fraction at default settings over 1000 samples") {
    for (std::uint64_t id = 0; id < 1000; ++id) {
      const Sample s = synth_sample(0, id, 64, 0.5);
      const double frac = static_cast<double>(std::count(s.y.begin(), s.y.end(), 1)) / 4096.0;
      CHECK(frac >= 0.02);
      CHECK(frac <= 0.25);
      CHECK(s.x0.vec().minCoeff() >= 0.0);
      CHECK(s.x1.vec().maxCoeff() <= 1.0);
    }
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(synth_sample(0, 0, 48, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(synth_sample(0, 0, 64, 1.5), std::invalid_argument);
  }
}

TEST_CASE("metrics") {
  const EvalReport r = EvalReport::from_counts(6, 2, 4, 100);
  CHECK(r.precision == 0.75);
  CHECK(r.recall == 0.6);
  CHECK(r.f1 == doctest::Approx(2.0 * 0.45 / 1.35));
  const EvalReport none = EvalReport::from_counts(0, 0, 5, 10);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);

  // perfect argmax prediction
  const std::vector<std::uint8_t> y{1, 0, 0, 1};
  Tensor4 logits(Shape{1, 2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) logits(0, 1, static_cast<int>(i / 2), static_cast<int>(i % 2)) = y[i] ? 1.0 : -1.0;
  EvalReport counts;
  accumulate_counts(logits, y, counts);
  const EvalReport perfect = EvalReport::from_counts(counts.tp, counts.fp, counts.fn, counts.tn);
  CHECK(perfect.tp == 2);
  CHECK(perfect.f1 == 1.0);
}

TEST_CASE("evaluate") {
  ChangerModel m(ModelConfig::preset(Variant::Ex), 54);
  std::vector<Sample> data = synth_generate(9, 5, 64, 0.5);
  const EvalReport a = evaluate(m, data, 2);
  std::reverse(data.begin(), data.end());
  std::rotate(data.begin(), data.begin() + 2, data.end());
  const EvalReport b = evaluate(m, data, 3);
  CHECK(a.tp == b.tp);
  CHECK(a.fp == b.fp);
  CHECK(a.fn == b.fn);
  CHECK(a.tn == b.tn);
  CHECK(a.tp + a.fp + a.fn + a.tn == 5u * 4096u);
  CHECK_THROWS_AS(evaluate(m, {}), std::invalid_argument);
}

TEST_CASE("training loop") {
  const auto train = synth_generate(0, 8, 64, 0.5);
  const auto eval = synth_generate(0, 2, 64, 0.5, 1'000'000);
  TrainConfig cfg;
  cfg.max_iters = 4;
  cfg.eval_every = 2;
  cfg.batch_size = 2;

  SUBCASE("log rows, lr trace and determinism") {
    ChangerModel m1(ModelConfig::preset(Variant::Ex), 0), m2(ModelConfig::preset(Variant::Ex), 0);
    std::ostringstream csv1, csv2;
    const TrainResult r = train_loop(m1, cfg, 0, train, eval, &csv1);
    train_loop(m2, cfg, 0, train, eval, &csv2);
    CHECK(csv1.str() == csv2.str());
    REQUIRE(r.log.size() == 4);
    for (const TrainLogRow& row : r.log) CHECK(row.lr == poly_lr(row.iter, 4, cfg.lr, cfg.poly_power));
    CHECK(std::abs(r.log[0].loss - std::log(2.0)) <= 0.15);
    CHECK_FALSE(r.log[0].eval.has_value());
    CHECK(r.log[1].eval.has_value());
    CHECK(r.log[3].eval.has_value());
    std::istringstream lines(csv1.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "iter,lr,loss,precision,recall,f1");
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 4);
    for (std::size_t i = 0; i < m1.params().size(); ++i) {
      CHECK(m1.params()[i].value.bitwise_equal(m2.params()[i].value));
    }
  }
  SUBCASE("a non-finite loss aborts and names the batch") {
    std::vector<Sample> poisoned = train;
    for (Sample& s : poisoned) s.x0[0] = std::nan("");
    ChangerModel m(ModelConfig::preset(Variant::Ex), 0);
    try {
      train_loop(m, cfg, 0, poisoned, eval);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      INFO(std::string(e.what()));
      CHECK(std::string(e.what()).find("synth-0-") != std::string::npos);
    }
  }
}
