#include <cmath>
#include <string>

#include "doctest.h"
#include "gen.hpp"
#include "mpcflow/data.hpp"
#include "mpcflow/errors.hpp"
#include "mpcflow/fd_check.hpp"
#include "mpcflow/inverse.hpp"

using namespace mpcflow;

namespace {

std::vector<OperatorPtr> linear_operators(std::size_t h, std::size_t w) {
  return {make_identity(h, w),          make_random_mask(h, w, 0.3, 7), make_box_mask(h, w, 4),
          make_gaussian_blur(h, w, 1.0), make_downsample2(h, w),         make_radon(h, w, 18)};
}

}  // namespace

TEST_CASE("identity operator") {
  const auto op = make_identity(2, 2);
  const Vec x{1.0, -2.0, 3.5, 0.25};
  CHECK(op->apply(x) == x);
  CHECK(op->apply_adjoint(x) == x);
}

TEST_CASE("mask keeping index 0") {
  const auto op = make_mask(1, 2, {0});
  CHECK(op->apply(Vec{3.0, 7.0}) == Vec{3.0});
  CHECK(op->apply_adjoint(Vec{5.0}) == Vec{5.0, 0.0});
  CHECK_THROWS_AS(make_mask(1, 2, {2}), DomainError);
}

TEST_CASE("random mask keeps the requested fraction") {
  const auto op = make_random_mask(16, 16, 0.3, 7);
  CHECK(op->output_dim() == 77);
  const auto bitmap = op->mask_bitmap();
  REQUIRE(bitmap);
  double kept = 0.0;
  for (double v : bitmap->pixels) kept += v;
  CHECK(kept == 77.0);
  CHECK(make_random_mask(16, 16, 0.3, 7)->materialize() == op->materialize());
  CHECK(make_random_mask(16, 16, 0.3, 8)->materialize() != op->materialize());
  CHECK_THROWS_AS(make_random_mask(4, 4, 1.5, 0), DomainError);
}

TEST_CASE("box mask removes a centred square") {
  const auto op = make_box_mask(8, 8, 4);
  CHECK(op->output_dim() == 64 - 16);
  const auto bitmap = op->mask_bitmap();
  REQUIRE(bitmap);
  CHECK(bitmap->pixels[0] == 1.0);
  CHECK(bitmap->pixels[3 * 8 + 3] == 0.0);
  CHECK(bitmap->pixels[2 * 8 + 2] == 0.0);
  CHECK(bitmap->pixels[6 * 8 + 6] == 1.0);
}

TEST_CASE("downsample keeps every second pixel") {
  const auto op = make_downsample2(4, 4);
  Vec x(16);
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  CHECK(op->apply(x) == Vec{0.0, 2.0, 8.0, 10.0});
}

TEST_CASE("gaussian blur preserves a constant interior and sums to one") {
  const auto op = make_gaussian_blur(16, 16, 1.0);
  const Vec ones(256, 1.0);
  const Vec y = op->apply(ones);
  CHECK(y[8 * 16 + 8] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(y[0] < 1.0);
  Vec delta(256, 0.0);
  delta[8 * 16 + 8] = 1.0;
  double total = 0.0;
  for (double v : op->apply(delta)) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(make_gaussian_blur(4, 4, 0.0), DomainError);
}

TEST_CASE("adjoint identity on random pairs") {
  Rng rng(31);
  for (const auto& op : linear_operators(16, 16)) {
    CAPTURE(to_string(op->kind()));
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Vec x = testgen::normal_vec(rng, op->input_dim());
      const Vec y = testgen::normal_vec(rng, op->output_dim());
      worst = std::max(worst, std::abs(testgen::dot(op->apply(x), y) - testgen::dot(x, op->apply_adjoint(y))));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("materialised matrix agrees with the structured apply") {
  Rng rng(32);
  for (const auto& op : linear_operators(8, 8)) {
    CAPTURE(to_string(op->kind()));
    const Vec m = op->materialize();
    const std::size_t rows = op->output_dim();
    const std::size_t cols = op->input_dim();
    for (int trial = 0; trial < 5; ++trial) {
      const Vec x = testgen::normal_vec(rng, cols);
      const Vec y = op->apply(x);
      Vec dense(rows, 0.0);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) dense[i] += m[i * cols + j] * x[j];
      }
      CHECK(testgen::max_abs_diff(dense, y) < 1e-12);
    }
  }
}

TEST_CASE("selection operators satisfy A A^T = I") {
  Rng rng(33);
  for (const auto& op : {make_downsample2(16, 16), make_random_mask(16, 16, 0.5, 2), make_box_mask(16, 16, 6)}) {
    const Vec y = testgen::normal_vec(rng, op->output_dim());
    CHECK(op->apply(op->apply_adjoint(y)) == y);
  }
}

TEST_CASE("radon rows are positive and touch at most h + w pixels") {
  const auto op = make_radon(16, 16, 18);
  CHECK(op->output_dim() == 18 * 16);
  const Vec m = op->materialize();
  for (std::size_t r = 0; r < op->output_dim(); ++r) {
    double sum = 0.0;
    std::size_t touched = 0;
    for (std::size_t c = 0; c < 256; ++c) {
      sum += m[r * 256 + c];
      if (m[r * 256 + c] != 0.0) ++touched;
    }
    CAPTURE(r);
    CHECK(sum > 0.0);
    CHECK(touched <= 32);
  }
  // At the horizontal angle every pixel lands in exactly one bin.
  double first = 0.0;
  for (std::size_t i = 0; i < 16 * 256; ++i) first += m[i];
  CHECK(first == 256.0);
  double total = 0.0;
  for (double v : m) total += v;
  CHECK(total <= 18.0 * 256.0);
}

TEST_CASE("nonlinear blur has no adjoint") {
  const auto op = make_nonlinear_blur(8, 8, 1.0, 2.0);
  CHECK_FALSE(op->is_linear());
  try {
    op->apply_adjoint(Vec(64, 0.0));
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()) == "nonlinear operator has no adjoint");
  }
  const Vec x(64, 0.25);
  const Vec y = op->apply(x);
  CHECK(y[4 * 8 + 4] == doctest::Approx(std::tanh(0.5)).epsilon(1e-13));
}

TEST_CASE("operator factory dispatches on the tag") {
  OperatorSpec spec;
  for (const char* tag : {"identity", "mask", "box-mask", "gaussian-blur", "downsample2", "radon", "nonlinear-blur"}) {
    spec.op = tag;
    CHECK(to_string(make_operator(spec, 16, 16)->kind()) == tag);
  }
  spec.op = "fourier";
  CHECK_THROWS_AS(make_operator(spec, 16, 16), DomainError);
}

TEST_CASE("shape mismatches are rejected") {
  const auto op = make_downsample2(4, 4);
  CHECK_THROWS_AS(op->apply(Vec(15)), ShapeError);
  CHECK_THROWS_AS(op->apply_adjoint(Vec(5)), ShapeError);
}

TEST_CASE("noiseless measurement equals the operator output") {
  const auto op = make_gaussian_blur(16, 16, 1.0);
  const Vec x = sample_discs16(1, 4)[0];
  const Observation obs = simulate_measurement(op, x, 0.0, 3);
  CHECK(obs.y == op->apply(x));
  CHECK(obs.x_true == x);
}

TEST_CASE("measurements are deterministic per seed") {
  const auto op = make_identity(16, 16);
  const Vec x = sample_discs16(1, 4)[0];
  CHECK(simulate_measurement(op, x, 0.1, 5).y == simulate_measurement(op, x, 0.1, 5).y);
  CHECK(simulate_measurement(op, x, 0.1, 5).y != simulate_measurement(op, x, 0.1, 6).y);
  CHECK_THROWS_AS(simulate_measurement(op, x, -0.1, 5), DomainError);
}

TEST_CASE("measurement noise has the requested standard deviation") {
  const auto op = make_identity(250, 400);
  const Vec x(100000, 0.5);
  const Observation obs = simulate_measurement(op, x, 0.05, 11);
  double mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += obs.y[i] - x[i];
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) var += (obs.y[i] - x[i] - mean) * (obs.y[i] - x[i] - mean);
  const double std_dev = std::sqrt(var / static_cast<double>(x.size() - 1));
  CHECK(std::abs(std_dev - 0.05) < 0.02 * 0.05);
}

TEST_CASE("gaussian likelihood loss values") {
  const auto op = make_identity(1, 2);
  const Observation obs{Vec{0.0, 0.0}, 1.0, op, std::nullopt};
  const GaussianLikelihoodLoss loss(obs);
  CHECK(loss.value(Vec{3.0, 4.0}) == 12.5);
  CHECK(loss.value(Vec{0.0, 0.0}) == 0.0);
  const GaussianLikelihoodLoss unscaled(obs, LikelihoodScale::Unscaled);
  CHECK(unscaled.value(Vec{3.0, 4.0}) == 25.0);
  const GaussianLikelihoodLoss noiseless(Observation{Vec{0.0, 0.0}, 0.0, op, std::nullopt});
  CHECK(noiseless.weight() == 0.5);
}

TEST_CASE("likelihood loss scales as one over sigma squared") {
  const auto op = make_random_mask(8, 8, 0.5, 1);
  Rng rng(4);
  const Vec y = testgen::normal_vec(rng, op->output_dim());
  const GaussianLikelihoodLoss a(Observation{y, 0.1, op, std::nullopt});
  const GaussianLikelihoodLoss b(Observation{y, 0.4, op, std::nullopt});
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = testgen::normal_vec(rng, 64);
    CHECK(a.value(x) == doctest::Approx(16.0 * b.value(x)).epsilon(1e-13));
  }
}

TEST_CASE("likelihood gradient equals A^T (A x - y) / sigma^2") {
  Rng rng(5);
  const double sigma = 0.3;
  for (const auto& op : linear_operators(8, 8)) {
    CAPTURE(to_string(op->kind()));
    const Vec y = testgen::normal_vec(rng, op->output_dim());
    const GaussianLikelihoodLoss loss(Observation{y, sigma, op, std::nullopt});
    const Vec x = testgen::normal_vec(rng, 64);
    Vec residual = op->apply(x);
    for (std::size_t i = 0; i < residual.size(); ++i) residual[i] -= y[i];
    Vec expected = op->apply_adjoint(residual);
    for (double& v : expected) v /= sigma * sigma;
    const Vec got = ad::gradient([&](ad::Tape& t, ad::Var v) { return loss.value(t, v); }, x, ad::Shape{64, 1});
    double scale = 1.0;
    for (double v : expected) scale = std::max(scale, std::abs(v));
    CHECK(testgen::max_abs_diff(got, expected) < 1e-10 * scale);
  }
}

TEST_CASE("terminal losses for every operator match finite differences") {
  Rng rng(6);
  std::vector<OperatorPtr> ops = linear_operators(8, 8);
  ops.push_back(make_nonlinear_blur(8, 8, 1.0, 2.0));
  for (const auto& op : ops) {
    CAPTURE(to_string(op->kind()));
    const Vec x_true = testgen::uniform_vec(rng, 64, 0.0, 1.0);
    const auto loss = terminal_loss(simulate_measurement(op, x_true, 0.1, 2));
    const Vec x = testgen::uniform_vec(rng, 64, 0.0, 1.0);
    CHECK(ad::fd_check([&](ad::Tape& t, ad::Var v) { return loss->value(t, v); }, x, ad::Shape{64, 1}, 1e-5) < 1e-4);
  }
}

TEST_CASE("taped and plain operator paths agree") {
  Rng rng(7);
  std::vector<OperatorPtr> ops = linear_operators(8, 8);
  ops.push_back(make_nonlinear_blur(8, 8, 1.0, 2.0));
  for (const auto& op : ops) {
    const Vec x = testgen::normal_vec(rng, 64);
    ad::Tape tape;
    const auto taped = op->apply(tape, tape.constant(x, ad::Shape{64, 1})).value();
    CHECK(testgen::max_abs_diff(Vec(taped.begin(), taped.end()), op->apply(x)) < 1e-14);
  }
}

TEST_CASE("corner target loss") {
  const auto loss = corner_target_loss({1.0, -std::sqrt(3.0)});
  CHECK(loss->value(Vec{1.0, -std::sqrt(3.0)}) == 0.0);
  CHECK(loss->value(Vec{2.0, 1.0 - std::sqrt(3.0)}) == doctest::Approx(2.0).epsilon(1e-15));
  const Vec x{0.3, 0.4};
  const Vec g = ad::gradient([&](ad::Tape& t, ad::Var v) { return loss->value(t, v); }, x, ad::Shape{2, 1});
  CHECK(g[0] == 2.0 * (0.3 - 1.0));
  CHECK(g[1] == 2.0 * (0.4 + std::sqrt(3.0)));
}
