#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "gen.hpp"
#include "mpcflow/errors.hpp"
#include "mpcflow/fd_check.hpp"
#include "mpcflow/tape.hpp"

using namespace mpcflow;
using namespace mpcflow::ad;
using Vec = std::vector<double>;

TEST_CASE("square of a scalar") {
  Tape tape;
  Var x = tape.leaf({3.0});
  Var y = square(x);
  tape.backward(y);
  CHECK(y.item() == 9.0);
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("sum of a sum has unit gradients") {
  Tape tape;
  Var a = tape.leaf({1.0, 2.0});
  Var b = tape.leaf({3.0, 4.0});
  Var s = sum(add(a, b));
  tape.backward(s);
  CHECK(s.item() == 10.0);
  for (double g : a.grad()) CHECK(g == 1.0);
  for (double g : b.grad()) CHECK(g == 1.0);
}

TEST_CASE("squared norm") {
  Tape tape;
  Var x = tape.leaf({3.0, 4.0});
  Var n = squared_norm(x);
  tape.backward(n);
  CHECK(n.item() == 25.0);
  CHECK(x.grad()[0] == 6.0);
  CHECK(x.grad()[1] == 8.0);
}

TEST_CASE("mean of squares") {
  Tape tape;
  Var x = tape.leaf({1.0, 2.0, 3.0});
  tape.backward(mean(square(x)));
  CHECK(x.grad()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(x.grad()[2] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("disconnected leaf keeps an exactly zero gradient") {
  Tape tape;
  Var x = tape.leaf({1.0, 2.0});
  Var unused = tape.leaf({5.0, 6.0});
  tape.backward(sum(x));
  REQUIRE(unused.grad().size() == 2);
  CHECK(unused.grad()[0] == 0.0);
  CHECK(unused.grad()[1] == 0.0);
}

TEST_CASE("backward needs a scalar root") {
  Tape tape;
  Var x = tape.leaf({1.0, 2.0});
  CHECK_THROWS_AS(tape.backward(square(x)), ShapeError);
}

TEST_CASE("shape mismatch names op and shapes") {
  Tape tape;
  Var a = tape.leaf({1.0, 2.0});
  Var b = tape.leaf({1.0, 2.0, 3.0});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("(2x1)") != std::string::npos);
    CHECK(msg.find("(3x1)") != std::string::npos);
  }
  Var w = tape.leaf(std::vector<double>(6, 1.0), Shape{2, 3});
  CHECK_THROWS_AS(matmul(w, a), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(slice(a, 1, 2), ShapeError);
}

TEST_CASE("leaf gradients accumulate until zero_grad") {
  Tape tape;
  Var x = tape.leaf({2.0});
  Var y = square(x);
  tape.backward(y);
  tape.backward(y);
  CHECK(x.grad()[0] == 8.0);
  tape.zero_grad();
  CHECK(x.grad()[0] == 0.0);
  tape.backward(y);
  CHECK(x.grad()[0] == 4.0);
}

TEST_CASE("constants do not receive gradients") {
  Tape tape;
  Var c = tape.constant({1.0, 2.0});
  Var x = tape.leaf({3.0, 4.0});
  tape.backward(sum(mul(c, x)));
  CHECK_FALSE(c.requires_grad());
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("one backward rule per live interior node") {
  Tape tape;
  Var x = tape.leaf({0.5, -0.25, 1.5});
  Var w = tape.leaf({0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, Shape{2, 3});
  // Shared subexpression used twice: it must still be visited once.
  Var h = tanh(matvec(w, x));
  Var root = add(sum(mul(h, h)), squared_norm(h));
  const std::size_t before = tape.size();
  tape.backward(root);
  // Interior nodes: matvec, tanh, mul, sum, squared_norm, add.
  CHECK(before == 2 + 6);
  CHECK(tape.last_backward_rule_count() == 6);
}

TEST_CASE("forward values and gradients are bit-reproducible") {
  auto run = [] {
    Tape tape;
    Var x = tape.leaf({0.3, -1.2, 2.0, 0.7});
    Var y = softplus(add(sin(x), mul(cos(x), exp(scale(x, 0.3)))));
    Var root = mean(add(square(y), sqrt(add(square(x), tape.constant({1.0, 1.0, 1.0, 1.0})))));
    tape.backward(root);
    std::vector<double> out{root.item()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  CHECK(run() == run());
}

namespace {

struct Case {
  std::string name;
  std::function<Var(Tape&, Var)> f;
  std::size_t rows;
  std::size_t cols;
  bool positive = false;
};

}  // namespace

TEST_CASE("every primitive matches central differences") {
  Rng rng(11);
  const Vec other = testgen::uniform_vec(rng, 32);
  const Vec weights = testgen::uniform_vec(rng, 32 * 32);

  std::vector<Case> cases{
      {"add", [&](Tape& t, Var x) { return sum(add(x, t.constant(Vec(other.begin(), other.begin() + 7)))); }, 7, 1},
      {"sub", [&](Tape& t, Var x) { return squared_norm(sub(t.constant(Vec(7, 0.5)), x)); }, 7, 1},
      {"scale", [](Tape&, Var x) { return sum(mul(scale(x, -1.7), x)); }, 9, 1},
      {"scalar_mul", [](Tape&, Var x) { return squared_norm(scalar_mul(slice(x, 0, 1), slice(x, 1, 5))); }, 6, 1},
      {"mul", [](Tape&, Var x) { return sum(mul(mul(x, x), x)); }, 12, 1},
      {"matvec",
       [&](Tape& t, Var x) {
         return squared_norm(matvec(t.constant(Vec(weights.begin(), weights.begin() + 5 * 8), Shape{5, 8}), x));
       },
       8, 1},
      {"matmul",
       [&](Tape& t, Var x) {
         Var b = t.constant(Vec(weights.begin(), weights.begin() + 4 * 3), Shape{4, 3});
         return squared_norm(matmul(x, b));
       },
       2, 4},
      {"matmul-right",
       [&](Tape& t, Var x) {
         Var a = t.constant(Vec(weights.begin(), weights.begin() + 3 * 4), Shape{3, 4});
         return sum(tanh(matmul(a, x)));
       },
       4, 2},
      {"add_bias",
       [&](Tape& t, Var x) {
         Var m = t.constant(Vec(weights.begin(), weights.begin() + 3 * 5), Shape{3, 5});
         return squared_norm(add_bias(m, x));
       },
       3, 1},
      {"sum", [](Tape&, Var x) { return square(sum(x)); }, 10, 1},
      {"mean", [](Tape&, Var x) { return square(mean(x)); }, 10, 1},
      {"square", [](Tape&, Var x) { return sum(square(square(x))); }, 32, 1},
      {"sqrt", [](Tape&, Var x) { return sum(sqrt(x)); }, 16, 1, true},
      {"tanh", [](Tape&, Var x) { return sum(tanh(x)); }, 16, 1},
      {"sin", [](Tape&, Var x) { return sum(sin(x)); }, 16, 1},
      {"cos", [](Tape&, Var x) { return sum(cos(x)); }, 16, 1},
      {"exp", [](Tape&, Var x) { return sum(exp(x)); }, 16, 1},
      {"softplus", [](Tape&, Var x) { return sum(softplus(x)); }, 16, 1},
      {"concat", [](Tape&, Var x) { return squared_norm(concat({tanh(x), square(x), x})); }, 5, 1},
      {"slice", [](Tape&, Var x) { return sum(square(slice(x, 2, 3))); }, 8, 1},
      {"squared_norm", [](Tape&, Var x) { return squared_norm(x); }, 32, 1},
  };

  for (const Case& c : cases) {
    CAPTURE(c.name);
    const Shape shape{c.rows, c.cols};
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      Vec x = testgen::uniform_vec(rng, shape.size(), c.positive ? 0.25 : -2.0, 2.0);
      worst = std::max(worst, fd_check(c.f, x, shape, 1e-5));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("fd_check on a quadratic is exact to rounding") {
  const Vec x{1.0, -2.0};
  CHECK(fd_check([](Tape&, Var v) { return squared_norm(v); }, x, 1e-5) < 1e-7);
}

TEST_CASE("fd_check rejects non-finite functions") {
  const Vec x{-1.0, 2.0};
  CHECK_THROWS_AS(fd_check([](Tape&, Var v) { return sum(sqrt(v)); }, x, 1e-5), NonFiniteError);
}

TEST_CASE("two-layer network gradient against finite differences") {
  Rng rng(3);
  const Vec input = testgen::uniform_vec(rng, 4);
  const Vec target = testgen::uniform_vec(rng, 2);
  // Parameters packed as W0 (6x4), b0 (6), W1 (2x6), b1 (2).
  auto loss = [&](Tape& t, Var p) {
    Var w0 = slice(p, 0, 24);
    Var b0 = slice(p, 24, 6);
    Var w1 = slice(p, 30, 12);
    Var b1 = slice(p, 42, 2);
    std::vector<Var> hidden;
    for (std::size_t r = 0; r < 6; ++r) hidden.push_back(sum(mul(slice(w0, r * 4, 4), t.constant(input))));
    Var h = tanh(add(concat(hidden), b0));
    std::vector<Var> out;
    for (std::size_t r = 0; r < 2; ++r) out.push_back(sum(mul(slice(w1, r * 6, 6), h)));
    return squared_norm(sub(add(concat(out), b1), t.constant(target)));
  };
  for (int trial = 0; trial < 5; ++trial) {
    const Vec p = testgen::uniform_vec(rng, 44, -1.0, 1.0);
    CHECK(fd_check(loss, p, 1e-5) < 1e-4);
  }
}

TEST_CASE("linear map primitive uses the supplied adjoint") {
  struct Flip final : LinearMap {
    std::size_t in_dim() const override { return 3; }
    std::size_t out_dim() const override { return 2; }
    void forward(std::span<const double> in, std::span<double> out) const override {
      out[0] = in[2];
      out[1] = 2.0 * in[0];
    }
    void adjoint(std::span<const double> in, std::span<double> out) const override {
      out[0] = 2.0 * in[1];
      out[1] = 0.0;
      out[2] = in[0];
    }
  } flip;
  Tape tape;
  Var x = tape.leaf({1.0, 2.0, 3.0});
  Var y = apply_linear(flip, x);
  CHECK(y.value()[0] == 3.0);
  CHECK(y.value()[1] == 2.0);
  tape.backward(squared_norm(y));
  CHECK(x.grad()[0] == 8.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 6.0);
}
