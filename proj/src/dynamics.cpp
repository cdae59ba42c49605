#include "mpcflow/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "mpcflow/errors.hpp"

namespace mpcflow {

TimeGrid::TimeGrid(double start, double end, std::size_t steps) : start_(start), end_(end), steps_(steps) {
  if (!(start >= 0.0 && start < end && end <= 1.0)) {
    throw DomainError("time grid: need 0 <= start < end <= 1, got [" + std::to_string(start) + ", " +
                      std::to_string(end) + "]");
  }
  if (steps == 0) throw DomainError("time grid: need at least one step");
}

double TimeGrid::node(std::size_t k) const {
  if (k > steps_) throw std::out_of_range("time grid: node " + std::to_string(k) + " beyond " + std::to_string(steps_));
  if (k == steps_) return end_;
  return start_ + static_cast<double>(k) * step_size();
}

ControlSchedule ControlSchedule::zeros(const TimeGrid& grid, std::size_t dim) {
  return {grid, std::vector<Vec>(grid.steps(), Vec(dim, 0.0))};
}

void ControlSchedule::validate(std::size_t dim) const {
  if (controls.size() != grid.steps()) {
    throw ShapeError("control schedule: " + std::to_string(controls.size()) + " controls for " +
                     std::to_string(grid.steps()) + " grid cells");
  }
  for (std::size_t k = 0; k < controls.size(); ++k) {
    if (controls[k].size() != dim) {
      throw ShapeError("control schedule: control " + std::to_string(k) + " has dimension " +
                       std::to_string(controls[k].size()) + ", state dimension is " + std::to_string(dim));
    }
  }
}

namespace {

void check_finite(const Vec& x, std::size_t step) {
  for (double v : x) {
    if (!std::isfinite(v)) throw NonFiniteError("euler: non-finite state after step " + std::to_string(step));
  }
}

Trajectory rollout(const VectorField& field, std::span<const double> x0, const TimeGrid& grid,
                   const std::vector<Vec>* controls) {
  if (x0.size() != field.dim()) {
    throw ShapeError("euler: initial state has dimension " + std::to_string(x0.size()) + ", field expects " +
                     std::to_string(field.dim()));
  }
  Trajectory traj{grid, {}};
  traj.states.reserve(grid.steps() + 1);
  traj.states.emplace_back(x0.begin(), x0.end());
  check_finite(traj.states.back(), 0);
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double h = grid.width(k);
    const Vec& x = traj.states.back();
    Vec v = field.eval(x, grid.node(k));
    if (controls != nullptr) {
      const Vec& u = (*controls)[k];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += u[i];
    }
    Vec next(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) next[i] = x[i] + h * v[i];
    check_finite(next, k + 1);
    traj.states.push_back(std::move(next));
  }
  return traj;
}

}  // namespace

Trajectory euler_sample(const VectorField& field, std::span<const double> x0, const TimeGrid& grid) {
  return rollout(field, x0, grid, nullptr);
}

Trajectory euler_sample(const VectorField& field, std::span<const double> x0, std::size_t steps) {
  return euler_sample(field, x0, TimeGrid::unit(steps));
}

Trajectory euler_controlled(const VectorField& field, std::span<const double> x0, const ControlSchedule& schedule) {
  schedule.validate(field.dim());
  return rollout(field, x0, schedule.grid, &schedule.controls);
}

std::vector<ad::Var> euler_controlled(ad::Tape& tape, const VectorField& field, ad::Var x0,
                                      std::span<const ad::Var> controls, const TimeGrid& grid,
                                      const Vec* frozen_first_velocity) {
  if (controls.size() != grid.steps()) {
    throw ShapeError("euler: " + std::to_string(controls.size()) + " controls for " + std::to_string(grid.steps()) +
                     " grid cells");
  }
  std::vector<ad::Var> states{x0};
  states.reserve(grid.steps() + 1);
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    ad::Var x = states.back();
    ad::Var v = (k == 0 && frozen_first_velocity != nullptr) ? tape.constant(*frozen_first_velocity)
                                                             : field.eval(tape, x, grid.node(k));
    states.push_back(ad::add(x, ad::scale(ad::add(v, controls[k]), grid.width(k))));
  }
  return states;
}

Vec one_step_prediction(const VectorField& field, std::span<const double> x, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("one_step_prediction: time " + std::to_string(t) + " outside [0, 1]");
  Vec out(x.begin(), x.end());
  if (t == 1.0) return out;
  const Vec v = field.eval(x, t);
  const double remaining = 1.0 - t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += remaining * v[i];
  return out;
}

ad::Var one_step_prediction(ad::Tape& tape, const VectorField& field, ad::Var x, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("one_step_prediction: time " + std::to_string(t) + " outside [0, 1]");
  // The field is evaluated even at t = 1 so every call costs exactly one taped
  // evaluation; the zero weight makes the result x itself.
  ad::Var v = field.eval(tape, x, t);
  return ad::add(x, ad::scale(v, 1.0 - t));
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  const std::size_t d = trajectory.states.empty() ? 0 : trajectory.states.front().size();
  out << "k,t";
  for (std::size_t i = 0; i < d; ++i) out << ",x_" << i;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t k = 0; k < trajectory.states.size(); ++k) {
    out << k << ',' << trajectory.grid.node(k);
    for (double v : trajectory.states[k]) out << ',' << v;
    out << '\n';
  }
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& trajectory) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string() + " for writing");
  write_trajectory_csv(out, trajectory);
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("k,t", 0) != 0) {
    throw FormatError(FormatError::Kind::MalformedHeader, path.string() + ": expected header k,t,x_0,...");
  }
  const std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 3) throw FormatError(FormatError::Kind::MalformedHeader, path.string() + ": no state columns");
  std::vector<double> times;
  std::vector<Vec> states;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
    if (values.size() != columns) {
      throw FormatError(FormatError::Kind::MalformedHeader,
                        path.string() + ": row " + std::to_string(states.size()) + " has " +
                            std::to_string(values.size()) + " columns, header has " + std::to_string(columns));
    }
    times.push_back(values[1]);
    states.emplace_back(values.begin() + 2, values.end());
  }
  if (states.size() < 2) throw FormatError(FormatError::Kind::Truncated, path.string() + ": fewer than two rows");
  return {TimeGrid(times.front(), times.back(), states.size() - 1), std::move(states)};
}

}  // namespace mpcflow
