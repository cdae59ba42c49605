#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mpcflow/tape.hpp"

namespace mpcflow::ad {

/// Scalar function of one array argument, recorded on the given tape.
using ScalarFunction = std::function<Var(Tape&, Var)>;

/// Gradient of `f` at `x` by reverse-mode differentiation.
std::vector<double> gradient(const ScalarFunction& f, std::span<const double> x, Shape shape);

/// Central-difference gradient of `f` at `x` with step `eps`.
std::vector<double> finite_difference_gradient(const ScalarFunction& f, std::span<const double> x, Shape shape,
                                               double eps);

/// max_i |g_ad(i) - g_fd(i)| / max_i max(|g_ad(i)|, |g_fd(i)|). Throws NonFiniteError if f
/// is not finite at x or at any probe point x +- eps e_i.
double fd_check(const ScalarFunction& f, std::span<const double> x, double eps);
double fd_check(const ScalarFunction& f, std::span<const double> x, Shape shape, double eps);

}  // namespace mpcflow::ad
