#include <doctest.h>

#include <cmath>
#include <random>

#include "mtdon/graph.hpp"
#include "mtdon/optim.hpp"
#include "mtdon/rng.hpp"
#include "mtdon/tensor.hpp"
#include "support.hpp"

using namespace mtdon;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS(Tensor({2, 0}));
  CHECK_THROWS(t.item());
  CHECK(Tensor::scalar(4).item() == 4);
}

TEST_CASE("forward examples") {
  Graph g;
  auto id = g.input("a", Tensor({2, 2}, {1, 0, 0, 1}));
  auto v = g.input("b", Tensor({2, 1}, {3, 4}));
  const Tensor& r = g.value(g.matmul(id, v));
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r[0] == 3);
  CHECK(r[1] == 4);

  CHECK(g.value(g.mean(g.constant(Tensor({4}, {1, 2, 3, 4})))).item() == 2.5);

  auto w = g.parameter("W", Tensor({1, 1}, {2}));
  auto x = g.input("x", Tensor({1, 1}, {3}));
  auto y = g.mean(g.square(g.matmul(w, x)));
  CHECK(g.value(y).item() == 36);
  g.backward(y);
  // d/dW (W x)^2 = 2 W x^2
  CHECK(g.gradients().at("W")[0] == doctest::Approx(2 * 2 * 9));
}

TEST_CASE("matmul shape error names the operands") {
  Graph g;
  auto a = g.input("a", Tensor({2, 3}));
  auto b = g.input("b", Tensor({2, 3}));
  try {
    g.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK(g.value(g.matmul(a, b, true)).shape() == Shape{2, 2});
  CHECK_THROWS_AS(g.add(a, g.input("c", Tensor({3, 2}))), ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("constant loss gives zero gradient") {
    Graph g;
    auto w = g.parameter("w", Tensor({1}, {5}));
    auto c = g.add(g.scale(w, 0.0), g.constant(Tensor({1}, {7})));
    g.backward(g.sum(c));
    CHECK(g.gradients().at("w")[0] == 0.0);
  }
  SUBCASE("y = w x") {
    Graph g;
    auto w = g.parameter("w", Tensor({1}, {2}));
    auto x = g.input("x", Tensor({1}, {3}));
    g.backward(g.sum(g.mul(w, x)));
    CHECK(g.gradients().at("w")[0] == 3.0);
    CHECK(g.gradients().count("x") == 0);
  }
  SUBCASE("non-scalar loss") {
    Graph g;
    auto w = g.parameter("w", Tensor({2}, {2, 1}));
    CHECK_THROWS(g.backward(g.square(w)));
  }
  SUBCASE("parameter outside the loss gets zeros") {
    Graph g;
    auto w = g.parameter("w", Tensor({1}, {2}));
    g.parameter("unused", Tensor({3}, 1.0));
    g.backward(g.sum(w));
    CHECK(g.gradients().at("unused") == Tensor({3}, 0.0));
  }
}

TEST_CASE("finite-difference check of every primitive") {
  std::mt19937_64 rng(11);
  auto rnd = [&](Shape s) {
    Tensor t(s);
    for (auto& v : t.vec()) v = 2 * uniform01(rng) - 1;
    return t;
  };
  ParamRegistry reg;
  reg.add("a", rnd({3, 4}));
  reg.add("b", rnd({4, 2}));
  reg.add("c", rnd({3, 2}));
  reg.add("bias", rnd({2}));
  reg.add("k", rnd({2, 1, 3, 3}));
  reg.add("kb", rnd({2}));
  reg.add("img", rnd({2, 1, 5, 4}));
  reg.add("d", rnd({3, 8}));
  const Tensor mask({3, 2}, {1, 0, 1, 1, 0, 1});

  for (auto act : {Activation::tanh(), Activation::leaky_relu(0.1), Activation::swish(), Activation::relu()}) {
    CAPTURE(to_string(act));
    auto build = [&](Graph& g, const ParamBinding& p) {
      auto m = g.matmul(p.at("a"), p.at("b"));
      auto z = g.activate(g.add_bias(g.add(m, g.mul(p.at("c"), m)), p.at("bias"), 1), act);
      z = g.mask_select(g.sub(z, g.scale(p.at("c"), 0.3)), g.constant(mask));
      auto conv = g.avg_pool2(g.activate(g.conv2d(p.at("img"), p.at("k"), p.at("kb")), act));
      auto t = g.matmul(g.reshape(conv, {2, 8}), p.at("d"), true);
      return g.add(g.mean(g.square(z)), g.sum(g.square(t)));
    };
    const auto r = testing::check_gradients(reg, build);
    CAPTURE(r.where);
    CHECK(r.worst < 1e-6);
  }
}

TEST_CASE("dropout") {
  Graph g;
  std::mt19937_64 rng(3);
  auto x = g.input("x", Tensor({1000}, 1.0));
  const Tensor same = g.value(g.dropout(x, 0.0, rng));
  CHECK(same == g.value(x));
  const Tensor& y = g.value(g.dropout(x, 0.25, rng));
  std::size_t zeros = 0;
  for (double v : y.vec()) {
    if (v == 0.0)
      ++zeros;
    else
      CHECK(v == doctest::Approx(1 / 0.75));
  }
  CHECK(zeros > 200);
  CHECK(zeros < 300);
}

TEST_CASE("mask_select yields +0.0 even for non-finite inputs") {
  Graph g;
  auto x = g.input("x", Tensor({3}, {-1.0, std::nan(""), -INFINITY}));
  const Tensor& y = g.value(g.mask_select(x, g.constant(Tensor({3}, 0.0))));
  for (double v : y.vec()) {
    CHECK(v == 0.0);
    CHECK_FALSE(std::signbit(v));
  }
}

TEST_CASE("avg_pool2 floors odd extents") {
  Graph g;
  Tensor img({1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) img[i] = double(i);
  const Tensor& p = g.value(g.avg_pool2(g.input("x", img)));
  CHECK(p.shape() == Shape{1, 1, 1, 1});
  CHECK(p[0] == doctest::Approx((0 + 1 + 3 + 4) / 4.0));
}

TEST_CASE("forward is deterministic") {
  auto run = [] {
    Graph g;
    std::mt19937_64 rng(5);
    Tensor x({4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = std::sin(double(i));
    auto v = g.dropout(g.activate(g.matmul(g.input("x", x), g.input("y", x)), Activation::swish()), 0.2, rng);
    return g.value(g.sum(v)).item();
  };
  CHECK(run() == run());
}

TEST_CASE("adam") {
  SUBCASE("single step from a fresh state") {
    NamedTensors p{{"w", Tensor({1}, {0.0})}};
    AdamState s;
    adam_step(p, {{"w", Tensor({1}, {1.0})}}, s, 1e-3);
    CHECK(s.t == 1);
    CHECK(p["w"][0] == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("zero gradient leaves parameters bit-identical") {
    NamedTensors p{{"w", Tensor({2}, {0.3, -1.7})}};
    const NamedTensors before = p;
    AdamState s;
    for (int i = 0; i < 5; ++i) adam_step(p, {{"w", Tensor({2}, 0.0)}}, s, 1e-2);
    CHECK(p == before);
    CHECK(s.t == 5);
  }
  SUBCASE("repeated positive gradient decreases monotonically") {
    NamedTensors p{{"w", Tensor({1}, {0.0})}};
    AdamState s;
    double last = 0;
    for (int i = 0; i < 2; ++i) {
      adam_step(p, {{"w", Tensor({1}, {1.0})}}, s, 1e-3);
      CHECK(p["w"][0] < last);
      last = p["w"][0];
    }
  }
  SUBCASE("non-finite gradient aborts without touching state") {
    NamedTensors p{{"w", Tensor({1}, {1.0})}};
    AdamState s;
    CHECK_THROWS(adam_step(p, {{"w", Tensor({1}, {std::nan("")})}}, s, 1e-3));
    CHECK(p["w"][0] == 1.0);
    CHECK(s.t == 0);
  }
}

TEST_CASE("learning-rate schedules") {
  const LrSchedule stair(ExponentialStaircase{1e-3, 0.9, 1000});
  CHECK(lr_at(stair, 0) == 1e-3);
  CHECK(lr_at(stair, 999) == 1e-3);
  CHECK(lr_at(stair, 1000) == doctest::Approx(9e-4).epsilon(1e-14));

  const LrSchedule pw(PiecewiseConstant{{1e-3, 5e-4, 1e-4}, {1667, 3334}});
  CHECK(lr_at(pw, 0) == 1e-3);
  CHECK(lr_at(pw, 1666) == 1e-3);
  CHECK(lr_at(pw, 1667) == 5e-4);
  CHECK(lr_at(pw, 2000) == 5e-4);
  CHECK(lr_at(pw, 4999) == 1e-4);

  const auto thirds = LrSchedule::equal_segments({1e-3, 5e-4, 1e-4}, 5000);
  CHECK(lr_at(thirds, 1666) == 1e-3);
  CHECK(lr_at(thirds, 1667) == 5e-4);
  CHECK(lr_at(thirds, 3334) == 1e-4);

  CHECK_THROWS(LrSchedule(PiecewiseConstant{{1e-3, 0.0}, {10}}));
  CHECK_THROWS(LrSchedule(PiecewiseConstant{{1e-3, 1e-4, 1e-5}, {10, 10}}));
  CHECK_THROWS(LrSchedule(ExponentialStaircase{1e-3, 1.5, 10}));
  CHECK_THROWS(LrSchedule(ExponentialStaircase{1e-3, 0.0, 10}));

  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const auto step = static_cast<std::int64_t>(uniform_index(rng, 20000));
    CHECK(lr_at(stair, step) == 1e-3 * std::pow(0.9, double(step / 1000)));
    const double want = step < 1667 ? 1e-3 : step < 3334 ? 5e-4 : 1e-4;
    CHECK(lr_at(pw, step) == want);
  }
}
