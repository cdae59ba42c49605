#include "mpcflow/adam.hpp"

#include <cmath>
#include <string>

#include "mpcflow/errors.hpp"

namespace mpcflow {

AdamState make_adam_state(std::span<const Vec> params, double learning_rate) {
  AdamState state;
  state.learning_rate = learning_rate;
  for (const Vec& p : params) {
    state.first_moment.emplace_back(p.size(), 0.0);
    state.second_moment.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adam_step(std::span<Vec> params, std::span<const Vec> grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameter blocks, " +
                     std::to_string(grads.size()) + " gradient blocks, " +
                     std::to_string(state.first_moment.size()) + " moment blocks");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (grads[b].size() != params[b].size() || state.first_moment[b].size() != params[b].size()) {
      throw ShapeError("adam_step: block " + std::to_string(b) + " has " + std::to_string(params[b].size()) +
                       " parameters but " + std::to_string(grads[b].size()) + " gradients");
    }
    for (double g : grads[b]) {
      if (!std::isfinite(g)) throw NonFiniteError("adam_step: non-finite gradient in parameter block " + std::to_string(b));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    Vec& p = params[b];
    Vec& m = state.first_moment[b];
    Vec& v = state.second_moment[b];
    const Vec& g = grads[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace mpcflow
