#include "mpcflow/training.hpp"

#include <cmath>
#include <string>

#include "mpcflow/adam.hpp"
#include "mpcflow/errors.hpp"

namespace mpcflow {

namespace {

struct PackedBatch {
  Vec xt;      // d x B
  Vec t;       // 1 x B
  Vec target;  // d x B
  std::size_t dim = 0;
  std::size_t size = 0;
};

PackedBatch pack(const CfmBatch& batch, std::size_t dim) {
  const std::size_t n = batch.t.size();
  if (n == 0) throw DomainError("cfm_loss: empty batch");
  if (batch.x0.size() != n || batch.x1.size() != n) {
    throw ShapeError("cfm_loss: batch has " + std::to_string(batch.x0.size()) + " base samples, " +
                     std::to_string(batch.x1.size()) + " data samples and " + std::to_string(n) + " times");
  }
  PackedBatch p{Vec(dim * n), batch.t, Vec(dim * n), dim, n};
  for (std::size_t j = 0; j < n; ++j) {
    const Vec& a = batch.x0[j];
    const Vec& b = batch.x1[j];
    if (a.size() != dim || b.size() != dim) throw ShapeError("cfm_loss: sample dimension does not match model");
    const double t = batch.t[j];
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("cfm_loss: time " + std::to_string(t) + " outside [0, 1]");
    for (std::size_t i = 0; i < dim; ++i) {
      p.xt[i * n + j] = (1.0 - t) * a[i] + t * b[i];
      p.target[i * n + j] = b[i] - a[i];
    }
  }
  return p;
}

}  // namespace

ad::Var cfm_loss(ad::Tape& tape, const MlpVectorField& model, std::span<const ad::Var> params,
                 const CfmBatch& batch) {
  PackedBatch p = pack(batch, model.dim());
  ad::Var x = tape.constant(std::move(p.xt), ad::Shape{p.dim, p.size});
  ad::Var t = tape.constant(std::move(p.t), ad::Shape{1, p.size});
  ad::Var target = tape.constant(std::move(p.target), ad::Shape{p.dim, p.size});
  ad::Var residual = ad::sub(model.forward(tape, params, x, t), target);
  return ad::scale(ad::squared_norm(residual), 1.0 / static_cast<double>(p.size));
}

ad::Var data_prediction_loss(ad::Tape& tape, const MlpVectorField& network, std::span<const ad::Var> params,
                             const CfmBatch& batch) {
  PackedBatch p = pack(batch, network.dim());
  for (std::size_t j = 0; j < p.size; ++j) {
    for (std::size_t i = 0; i < p.dim; ++i) p.target[i * p.size + j] = batch.x1[j][i];
  }
  ad::Var x = tape.constant(std::move(p.xt), ad::Shape{p.dim, p.size});
  ad::Var t = tape.constant(std::move(p.t), ad::Shape{1, p.size});
  ad::Var target = tape.constant(std::move(p.target), ad::Shape{p.dim, p.size});
  ad::Var residual = ad::sub(network.forward(tape, params, x, t), target);
  return ad::scale(ad::squared_norm(residual), 1.0 / static_cast<double>(p.size));
}

double data_prediction_loss(const MlpVectorField& network, const CfmBatch& batch) {
  ad::Tape tape;
  const auto params = network.bind(tape, false);
  return data_prediction_loss(tape, network, params, batch).item();
}

double cfm_loss(const MlpVectorField& model, const CfmBatch& batch) {
  ad::Tape tape;
  const auto params = model.bind(tape, false);
  return cfm_loss(tape, model, params, batch).item();
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (iterations < 1) throw DomainError("iterations must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DomainError("learning_rate must be positive");
  if (hidden.empty()) throw DomainError("hidden must list at least one layer width");
}

CfmBatch draw_batch(const DatasetSampler& sampler, Rng& rng, std::size_t batch_size) {
  CfmBatch batch;
  batch.x1 = sampler.draw(rng, batch_size);
  batch.x0 = sample_base(rng, batch_size, sampler.dim);
  batch.t.resize(batch_size);
  for (double& t : batch.t) t = rng.uniform();
  return batch;
}

TrainResult train(const DatasetSampler& sampler, const TrainConfig& config, const TrainObserver& observer) {
  config.validate();
  const Rng root(config.seed);
  TrainResult result{MlpVectorField::random(sampler.dim, config.hidden, root.split(0).next_u64(),
                                            config.frequency_count),
                     {}};
  Rng data_rng = root.split(1);
  MlpVectorField& model = result.model;
  AdamState adam = make_adam_state(model.parameters(), config.learning_rate);
  result.losses.reserve(config.iterations);

  std::vector<Vec> grads(model.parameters().size());
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const CfmBatch batch = draw_batch(sampler, data_rng, config.batch_size);
    ad::Tape tape;
    const auto params = model.bind(tape, true);
    ad::Var loss = config.prediction == Prediction::Data ? data_prediction_loss(tape, model, params, batch)
                                                         : cfm_loss(tape, model, params, batch);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NonFiniteError("train: loss became non-finite at iteration " + std::to_string(it));
    }
    tape.backward(loss);
    for (std::size_t b = 0; b < params.size(); ++b) {
      const auto g = params[b].grad();
      grads[b].assign(g.begin(), g.end());
    }
    adam_step(model.mutable_parameters(), grads, adam);
    result.losses.push_back(value);
    if (observer) observer(it, value);
  }
  if (!model.all_finite()) throw NonFiniteError("train: parameters became non-finite");
  return result;
}

}  // namespace mpcflow
