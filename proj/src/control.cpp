#include "mpcflow/control.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>

#include "mpcflow/adam.hpp"
#include "mpcflow/errors.hpp"

namespace mpcflow {

std::string to_string(Method method) {
  switch (method) {
    case Method::Global: return "global";
    case Method::Rhc: return "rhc";
    case Method::RhcSingle: return "rhc1";
    case Method::DeltaT: return "deltat";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "global") return Method::Global;
  if (name == "rhc") return Method::Rhc;
  if (name == "rhc1") return Method::RhcSingle;
  if (name == "deltat") return Method::DeltaT;
  throw DomainError("unknown method '" + name + "' (expected global, rhc, rhc1 or deltat)");
}

void GuidanceConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("lambda must be finite and >= 0");
  if (steps == 0) throw DomainError("steps must be >= 1");
  if (inner_iterations == 0) throw DomainError("inner_iterations must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DomainError("learning_rate must be > 0");
  if (!(rel_tol >= 0.0)) throw DomainError("rel_tol must be >= 0");
  if (patience == 0) throw DomainError("patience must be >= 1");
}

double control_energy(const ControlSchedule& schedule) {
  double total = 0.0;
  for (std::size_t k = 0; k < schedule.controls.size(); ++k) {
    double sq = 0.0;
    for (double v : schedule.controls[k]) sq += v * v;
    total += schedule.grid.width(k) * sq;
  }
  return total;
}

double objective_eval(const VectorField& field, std::span<const double> x0, const ControlSchedule& schedule,
                      const TerminalLoss& loss, double lambda) {
  const Trajectory traj = euler_controlled(field, x0, schedule);
  return control_energy(schedule) + lambda * loss.value(traj.terminal());
}

namespace {

using Clock = std::chrono::steady_clock;

// Value of the objective at `u`; writes d(objective)/du into `grads`.
using InnerObjective = std::function<double(std::span<const Vec> u, std::vector<Vec>& grads)>;

struct InnerSolution {
  std::vector<Vec> controls;
  double objective = 0.0;
  std::size_t evaluations = 0;
};

// Adam from `u`, keeping the best iterate seen. Every evaluation but the last is
// followed by one Adam step, so a budget of n performs n steps. Stops early once
// the best objective has improved by no more than rel_tol over `patience` steps.
InnerSolution minimize(std::vector<Vec> u, const InnerObjective& objective, const GuidanceConfig& config,
                       std::size_t outer, const InnerObserver& observer) {
  AdamState state = make_adam_state(u, config.learning_rate);
  std::vector<double> history;
  history.reserve(config.inner_iterations + 1);
  std::vector<Vec> grads(u.size());
  InnerSolution best{u, std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i <= config.inner_iterations; ++i) {
    double value = 0.0;
    try {
      value = objective(u, grads);
    } catch (const NonFiniteError& e) {
      throw SolverError(e.what(), outer, i);
    }
    ++best.evaluations;
    if (!std::isfinite(value)) throw SolverError("non-finite objective", outer, i);
    if (observer) observer(outer, i, u, value);
    if (value < best.objective) {
      best.objective = value;
      best.controls = u;
    }
    history.push_back(best.objective);
    if (i == config.inner_iterations) break;
    if (i >= config.patience) {
      const double before = history[i - config.patience];
      if (before - best.objective < config.rel_tol * std::abs(before)) break;
    }
    try {
      adam_step(u, grads, state);
    } catch (const NonFiniteError& e) {
      throw SolverError(e.what(), outer, i);
    }
  }
  return best;
}

ad::Var weighted_energy(std::span<const ad::Var> controls, const TimeGrid& grid) {
  ad::Var total = ad::scale(ad::squared_norm(controls[0]), grid.width(0));
  for (std::size_t k = 1; k < controls.size(); ++k) {
    total = ad::add(total, ad::scale(ad::squared_norm(controls[k]), grid.width(k)));
  }
  return total;
}

// Builds a tape with the controls as leaves, evaluates `build` and backpropagates.
template <typename Build>
double taped_objective(std::span<const Vec> u, std::vector<Vec>& grads, Build&& build) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(u.size());
  for (const Vec& uk : u) leaves.push_back(tape.leaf_view(uk, ad::Shape{uk.size(), 1}));
  ad::Var j = build(tape, std::span<const ad::Var>(leaves));
  tape.backward(j);
  grads.resize(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    const auto g = leaves[k].grad();
    grads[k].assign(g.begin(), g.end());
  }
  return j.item();
}

void check_problem(const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                   const GuidanceConfig& config) {
  config.validate();
  if (x0.size() != field.dim()) {
    throw ShapeError("guidance: initial state has dimension " + std::to_string(x0.size()) + ", field expects " +
                     std::to_string(field.dim()));
  }
  if (loss.dim() != field.dim()) {
    throw ShapeError("guidance: terminal loss expects dimension " + std::to_string(loss.dim()) + ", field has " +
                     std::to_string(field.dim()));
  }
}

// Shared bookkeeping: stamps the result with timings, counts and the recomputed objective.
class Recorder {
 public:
  Recorder(Method method, const VectorField& field, const GuidanceConfig& config, double lambda_effective)
      : field_(field), start_counts_(field.counts()), started_(Clock::now()) {
    result_.method = method;
    result_.config = config;
    result_.lambda_effective = lambda_effective;
  }

  GuidanceResult finish(Trajectory trajectory, ControlSchedule applied, const TerminalLoss& loss,
                        std::size_t inner_evaluations) {
    const EvalCounts end = field_.counts();
    result_.evaluations = {end.plain - start_counts_.plain, end.taped - start_counts_.taped};
    result_.trajectory = std::move(trajectory);
    result_.applied = std::move(applied);
    result_.inner_iterations = inner_evaluations;
    result_.energy = control_energy(result_.applied);
    result_.terminal_loss = loss.value(result_.trajectory.terminal());
    result_.objective = result_.energy + result_.lambda_effective * result_.terminal_loss;
    result_.wall_time_s = std::chrono::duration<double>(Clock::now() - started_).count();
    return std::move(result_);
  }

 private:
  const VectorField& field_;
  EvalCounts start_counts_;
  Clock::time_point started_;
  GuidanceResult result_;
};

Vec advance(std::span<const double> x, std::span<const double> v, std::span<const double> u, double h,
            std::size_t outer) {
  Vec next(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    next[i] = x[i] + h * (v[i] + u[i]);
    if (!std::isfinite(next[i])) throw SolverError("non-finite state", outer, 0);
  }
  return next;
}

}  // namespace

GuidanceResult global_control_solve(const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                                    const GuidanceConfig& config, const InnerObserver& observer) {
  check_problem(field, x0, loss, config);
  Recorder recorder(Method::Global, field, config, config.lambda);
  const TimeGrid grid = TimeGrid::unit(config.steps);
  const Vec x_start(x0.begin(), x0.end());
  const double lambda = config.lambda;

  InnerObjective objective = [&](std::span<const Vec> u, std::vector<Vec>& grads) {
    return taped_objective(u, grads, [&](ad::Tape& tape, std::span<const ad::Var> controls) {
      ad::Var start = tape.constant_view(x_start, ad::Shape{x_start.size(), 1});
      const auto states = euler_controlled(tape, field, start, controls, grid);
      return ad::add(weighted_energy(controls, grid), ad::scale(loss.value(tape, states.back()), lambda));
    });
  };
  const InnerSolution solution =
      minimize(std::vector<Vec>(grid.steps(), Vec(field.dim(), 0.0)), objective, config, 0, observer);

  ControlSchedule applied{grid, solution.controls};
  Trajectory traj;
  try {
    traj = euler_controlled(field, x0, applied);
  } catch (const NonFiniteError& e) {
    throw SolverError(e.what(), 0, solution.evaluations);
  }
  return recorder.finish(std::move(traj), std::move(applied), loss, solution.evaluations);
}

namespace {

enum class Planner { Horizon, Single, DeltaT };

GuidanceResult receding(Method method, Planner planner, const VectorField& field, std::span<const double> x0,
                        const TerminalLoss& loss, const GuidanceConfig& config, const InnerObserver& observer) {
  check_problem(field, x0, loss, config);
  const TimeGrid outer = TimeGrid::unit(config.steps);
  double lambda = config.lambda;
  if (planner == Planner::DeltaT && config.rescale_lambda) lambda = config.lambda / outer.step_size();
  Recorder recorder(method, field, config, lambda);

  const bool one_shot = planner == Planner::Single && config.single_step == SingleStepMode::OneShot;
  const std::size_t dim = field.dim();
  std::vector<Vec> states{Vec(x0.begin(), x0.end())};
  std::vector<Vec> applied;
  std::optional<std::vector<Vec>> previous;
  std::size_t evaluations = 0;

  for (std::size_t n = 0; n < outer.steps(); ++n) {
    const double t = outer.node(n);
    const Vec& x = states.back();
    const Vec v = field.eval(x, t);

    std::size_t cells = 1;
    if (planner == Planner::Horizon) cells = config.horizon == 0 ? outer.steps() - n : config.horizon;
    const TimeGrid sub(t, 1.0, cells);
    const double h = one_shot ? 1.0 - t : outer.width(n);
    const double t_next = one_shot ? 1.0 : outer.node(n + 1);

    InnerObjective objective;
    if (planner == Planner::DeltaT) {
      objective = [&](std::span<const Vec> u, std::vector<Vec>& grads) {
        return taped_objective(u, grads, [&](ad::Tape& tape, std::span<const ad::Var> controls) {
          ad::Var xv = tape.constant_view(x, ad::Shape{dim, 1});
          ad::Var vv = tape.constant_view(v, ad::Shape{dim, 1});
          ad::Var stepped = ad::add(xv, ad::scale(ad::add(vv, controls[0]), h));
          ad::Var predicted = one_step_prediction(tape, field, stepped, t_next);
          return ad::add(ad::squared_norm(controls[0]), ad::scale(loss.value(tape, predicted), lambda));
        });
      };
    } else {
      objective = [&](std::span<const Vec> u, std::vector<Vec>& grads) {
        return taped_objective(u, grads, [&](ad::Tape& tape, std::span<const ad::Var> controls) {
          ad::Var xv = tape.constant_view(x, ad::Shape{dim, 1});
          const auto rollout = euler_controlled(tape, field, xv, controls, sub, &v);
          return ad::add(weighted_energy(controls, sub), ad::scale(loss.value(tape, rollout.back()), lambda));
        });
      };
    }

    std::vector<Vec> init(cells, Vec(dim, 0.0));
    if (config.warm_start && previous && previous->size() == cells) init = *previous;
    InnerSolution solution = minimize(std::move(init), objective, config, n, observer);
    evaluations += solution.evaluations;

    Vec next = advance(x, v, solution.controls[0], h, n);
    applied.push_back(solution.controls[0]);
    states.push_back(std::move(next));
    previous = std::move(solution.controls);
    if (one_shot) break;
  }

  const TimeGrid grid = one_shot ? TimeGrid::unit(1) : outer;
  ControlSchedule schedule{grid, std::move(applied)};
  return recorder.finish(Trajectory{grid, std::move(states)}, std::move(schedule), loss, evaluations);
}

}  // namespace

GuidanceResult mpc_rhc(const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                       const GuidanceConfig& config, const InnerObserver& observer) {
  return receding(Method::Rhc, Planner::Horizon, field, x0, loss, config, observer);
}

GuidanceResult mpc_rhc_single(const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                              const GuidanceConfig& config, const InnerObserver& observer) {
  return receding(Method::RhcSingle, Planner::Single, field, x0, loss, config, observer);
}

GuidanceResult mpc_delta_t(const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                           const GuidanceConfig& config, const InnerObserver& observer) {
  return receding(Method::DeltaT, Planner::DeltaT, field, x0, loss, config, observer);
}

GuidanceResult solve(Method method, const VectorField& field, std::span<const double> x0, const TerminalLoss& loss,
                     const GuidanceConfig& config, const InnerObserver& observer) {
  switch (method) {
    case Method::Global: return global_control_solve(field, x0, loss, config, observer);
    case Method::Rhc: return mpc_rhc(field, x0, loss, config, observer);
    case Method::RhcSingle: return mpc_rhc_single(field, x0, loss, config, observer);
    case Method::DeltaT: return mpc_delta_t(field, x0, loss, config, observer);
  }
  throw DomainError("unknown method");
}

}  // namespace mpcflow
