#include "mpcflow/fd_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mpcflow/errors.hpp"

namespace mpcflow::ad {

namespace {

double evaluate(const ScalarFunction& f, std::span<const double> x, Shape shape) {
  Tape tape;
  Var in = tape.constant(std::vector<double>(x.begin(), x.end()), shape);
  const double v = f(tape, in).item();
  if (!std::isfinite(v)) throw NonFiniteError("fd_check: function value is not finite");
  return v;
}

}  // namespace

std::vector<double> gradient(const ScalarFunction& f, std::span<const double> x, Shape shape) {
  Tape tape;
  Var in = tape.leaf(std::vector<double>(x.begin(), x.end()), shape);
  Var out = f(tape, in);
  if (!std::isfinite(out.item())) throw NonFiniteError("fd_check: function value is not finite");
  tape.backward(out);
  const auto g = in.grad();
  return {g.begin(), g.end()};
}

std::vector<double> finite_difference_gradient(const ScalarFunction& f, std::span<const double> x, Shape shape,
                                               double eps) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = evaluate(f, probe, shape);
    probe[i] = x[i] - eps;
    const double down = evaluate(f, probe, shape);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double fd_check(const ScalarFunction& f, std::span<const double> x, Shape shape, double eps) {
  if (shape.size() != x.size()) {
    throw ShapeError("fd_check: point of length " + std::to_string(x.size()) + " does not match shape " +
                     shape.str());
  }
  const auto ad = gradient(f, x, shape);
  const auto fd = finite_difference_gradient(f, x, shape, eps);
  double diff = 0.0;
  double scale = 1e-12;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff = std::max(diff, std::abs(ad[i] - fd[i]));
    scale = std::max({scale, std::abs(ad[i]), std::abs(fd[i])});
  }
  return diff / scale;
}

double fd_check(const ScalarFunction& f, std::span<const double> x, double eps) {
  return fd_check(f, x, Shape{x.size(), 1}, eps);
}

}  // namespace mpcflow::ad
