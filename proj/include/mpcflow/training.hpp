#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mpcflow/data.hpp"
#include "mpcflow/mlp.hpp"
#include "mpcflow/tape.hpp"

namespace mpcflow {

/// Training pairs for the flow-matching regression: base samples x0, data
/// samples x1 and times t, one entry per pair.
struct CfmBatch {
  std::vector<Vec> x0;
  std::vector<Vec> x1;
  Vec t;
};

/// Mean over the batch of ||v(x_t, t) - (x1 - x0)||^2 with x_t = (1 - t) x0 + t x1.
double cfm_loss(const MlpVectorField& model, const CfmBatch& batch);
/// Same loss recorded on a tape against bound parameters (see MlpVectorField::bind).
ad::Var cfm_loss(ad::Tape& tape, const MlpVectorField& model, std::span<const ad::Var> params, const CfmBatch& batch);

/// Mean over the batch of ||D(x_t, t) - x1||^2, the flow-matching loss weighted
/// by (1 - t)^2 when v = (D - x) / (1 - t). Used to train DataPredictionField networks.
double data_prediction_loss(const MlpVectorField& network, const CfmBatch& batch);
ad::Var data_prediction_loss(ad::Tape& tape, const MlpVectorField& network, std::span<const ad::Var> params,
                             const CfmBatch& batch);

/// What the trained network outputs: the velocity itself, or the data endpoint
/// (wrap the result in DataPredictionField to sample from it).
enum class Prediction { Velocity, Data };

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t iterations = 5000;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::string dataset = "hexagon";
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t frequency_count = MlpVectorField::kDefaultFrequencies;
  Prediction prediction = Prediction::Velocity;

  /// Throws DomainError naming the offending field.
  void validate() const;
};

struct TrainResult {
  MlpVectorField model;
  /// Loss of the minibatch at each iteration, before that iteration's update.
  std::vector<double> losses;
};

/// Called after every iteration with (iteration, loss).
using TrainObserver = std::function<void(std::size_t, double)>;

/// Flow-matching training with independent coupling, t ~ U[0,1] and Adam.
/// Deterministic in config.seed. Throws NonFiniteError with the iteration index
/// if the loss diverges.
TrainResult train(const DatasetSampler& sampler, const TrainConfig& config, const TrainObserver& observer = {});

/// Draws one training batch from the streams derived from `rng`.
CfmBatch draw_batch(const DatasetSampler& sampler, Rng& rng, std::size_t batch_size);

}  // namespace mpcflow
