#pragma once

// Guidance solvers: global optimal control over the whole rollout, receding
// horizon control with a K-step lookahead, its single-step variant and the
// greedy dt-horizon controller with a one-step value estimate.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mpcflow/dynamics.hpp"
#include "mpcflow/inverse.hpp"
#include "mpcflow/vector_field.hpp"

namespace mpcflow {

enum class Method { Global, Rhc, RhcSingle, DeltaT };

/// "global", "rhc", "rhc1", "deltat".
std::string to_string(Method method);
/// Throws DomainError for an unknown name.
Method parse_method(const std::string& name);

/// How far the single-step controller advances after each solve.
enum class SingleStepMode {
  /// One outer cell of width 1/N.
  ShortStep,
  /// Straight to t = 1 in one step of width 1 - t'.
  OneShot,
};

struct GuidanceConfig {
  /// Weight of the terminal loss (the unscaled value for the dt-horizon method).
  double lambda = 1.0;
  /// Outer grid size N.
  std::size_t steps = 20;
  /// Lookahead K for rhc; 0 means the whole remaining outer grid (N - n cells at step n).
  std::size_t horizon = 1;
  /// Inner Adam budget per solve.
  std::size_t inner_iterations = 100;
  double learning_rate = 0.1;
  /// dt-horizon only: optimise against lambda / dt instead of lambda.
  bool rescale_lambda = false;
  /// Start each inner solve from the previous solution instead of zero.
  bool warm_start = false;
  SingleStepMode single_step = SingleStepMode::ShortStep;
  /// Early stop when J improved by less than rel_tol * |J| over `patience` iterations.
  double rel_tol = 1e-6;
  std::size_t patience = 20;
  std::uint64_t seed = 0;

  /// Throws DomainError naming the offending field.
  void validate() const;
};

/// Called after every inner objective evaluation with the controls that were
/// evaluated and their objective value.
using InnerObserver =
    std::function<void(std::size_t outer, std::size_t inner, std::span<const Vec> controls, double objective)>;

struct GuidanceResult {
  Method method = Method::Global;
  GuidanceConfig config;
  /// Weight actually applied to the terminal loss.
  double lambda_effective = 0.0;
  Trajectory trajectory;
  /// Controls applied on the trajectory's grid.
  ControlSchedule applied;
  /// energy + lambda_effective * terminal_loss.
  double objective = 0.0;
  double energy = 0.0;
  double terminal_loss = 0.0;
  double wall_time_s = 0.0;
  /// Inner iterations summed over all outer steps.
  std::size_t inner_iterations = 0;
  /// Field evaluations during the solve, split into plain and taped.
  EvalCounts evaluations;

  const Vec& terminal() const { return trajectory.terminal(); }
};

/// Sum_k width_k ||u_k||^2.
double control_energy(const ControlSchedule& schedule);

/// control_energy(U) + lambda * Phi(x_K) for the controlled rollout from x0.
double objective_eval(const VectorField& field, std::span<const double> x0, const ControlSchedule& schedule,
                      const TerminalLoss& loss, double lambda);

/// Adam on all N controls jointly, gradients by backpropagating through the rollout.
GuidanceResult global_control_solve(const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                                    const GuidanceConfig& config, const InnerObserver& observer = {});

/// Receding horizon: re-plan K cells on [t', 1] at each outer step and apply the first control.
GuidanceResult mpc_rhc(const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                       const GuidanceConfig& config, const InnerObserver& observer = {});

/// K = 1 receding horizon with v(x, t') frozen, so no gradient passes through the field.
GuidanceResult mpc_rhc_single(const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                              const GuidanceConfig& config, const InnerObserver& observer = {});

/// Greedy one-cell control against ||u||^2 + lambda Phi(x + (1 - t) v(x, t)) at t = t' + dt.
GuidanceResult mpc_delta_t(const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                           const GuidanceConfig& config, const InnerObserver& observer = {});

GuidanceResult solve(Method method, const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                     const GuidanceConfig& config, const InnerObserver& observer = {});

}  // namespace mpcflow
