#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mpcflow {

using Vec = std::vector<double>;

/// Adam with bias-corrected moments. Moment buffers mirror the parameter blocks.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Vec> first_moment;
  std::vector<Vec> second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;
};

/// Zero moments shaped like `params`.
AdamState make_adam_state(std::span<const Vec> params, double learning_rate);

/// One in-place update. Throws ShapeError if a gradient block does not match its
/// parameter block and NonFiniteError naming the block if a gradient is not finite;
/// on error neither params nor state are modified.
void adam_step(std::span<Vec> params, std::span<const Vec> grads, AdamState& state);

}  // namespace mpcflow
