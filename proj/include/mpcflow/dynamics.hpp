#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "mpcflow/tape.hpp"
#include "mpcflow/vector_field.hpp"

namespace mpcflow {

/// Uniform grid t_k = start + k (end - start) / steps, k = 0..steps, with the
/// last node pinned to `end` exactly. Cell k has width t_{k+1} - t_k, so the
/// final cell always closes at `end` even when the nominal step rounds.
class TimeGrid {
 public:
  /// Requires 0 <= start < end <= 1 and steps >= 1 (DomainError otherwise).
  TimeGrid(double start, double end, std::size_t steps);
  /// The single-cell grid on [0, 1].
  TimeGrid() : TimeGrid(0.0, 1.0, 1) {}
  static TimeGrid unit(std::size_t steps) { return TimeGrid(0.0, 1.0, steps); }

  double start() const noexcept { return start_; }
  double end() const noexcept { return end_; }
  std::size_t steps() const noexcept { return steps_; }
  /// Cell width (end - start) / steps.
  double step_size() const noexcept { return (end_ - start_) / static_cast<double>(steps_); }
  double node(std::size_t k) const;
  /// Width of cell k, node(k + 1) - node(k).
  double width(std::size_t k) const { return node(k + 1) - node(k); }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double start_;
  double end_;
  std::size_t steps_;
};

/// Piecewise-constant controls; controls[k] acts on [t_k, t_{k+1}).
struct ControlSchedule {
  TimeGrid grid;
  std::vector<Vec> controls;

  static ControlSchedule zeros(const TimeGrid& grid, std::size_t dim);
  /// Throws ShapeError unless there is one control of dimension `dim` per cell.
  void validate(std::size_t dim) const;
};

/// States x_{t_0}, ..., x_{t_K} on a grid.
struct Trajectory {
  TimeGrid grid;
  std::vector<Vec> states;

  const Vec& terminal() const { return states.back(); }
};

/// Explicit Euler for dx/dt = v(x, t) on the unit interval with `steps` cells.
/// Throws NonFiniteError naming the step if a state stops being finite.
Trajectory euler_sample(const VectorField& field, std::span<const double> x0, std::size_t steps);
Trajectory euler_sample(const VectorField& field, std::span<const double> x0, const TimeGrid& grid);

/// Explicit Euler for dx/dt = v(x, t) + u_k on the schedule's grid.
Trajectory euler_controlled(const VectorField& field, std::span<const double> x0, const ControlSchedule& schedule);

/// Taped rollout: returns the K+1 states, differentiable in x0 and every control.
/// `frozen_first_velocity`, when given, is used as v(x_{t_0}, t_0) instead of
/// evaluating the field on the tape; it is a constant of the graph.
std::vector<ad::Var> euler_controlled(ad::Tape& tape, const VectorField& field, ad::Var x0,
                                      std::span<const ad::Var> controls, const TimeGrid& grid,
                                      const Vec* frozen_first_velocity = nullptr);

/// x + (1 - t) v(x, t): the terminal state predicted by one Euler step.
Vec one_step_prediction(const VectorField& field, std::span<const double> x, double t);
ad::Var one_step_prediction(ad::Tape& tape, const VectorField& field, ad::Var x, double t);

/// CSV with header k,t,x_0,...,x_{d-1}; t printed with 17 significant digits.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& trajectory);
/// Parses a CSV written by write_trajectory_csv. The grid is reconstructed from
/// the first and last t and the row count.
Trajectory read_trajectory_csv(const std::filesystem::path& path);

}  // namespace mpcflow
