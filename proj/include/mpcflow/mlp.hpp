#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mpcflow/tape.hpp"
#include "mpcflow/vector_field.hpp"

namespace mpcflow {

struct LayerShape {
  std::size_t rows = 0;  // output width
  std::size_t cols = 0;  // input width

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Time-conditioned MLP velocity field.
///
/// The input is [x; sin(w_j t); cos(w_j t)] with w_j = 2^j * pi for
/// j < frequency_count, followed by dense layers with tanh between them and a
/// linear output layer of width d. Parameters are stored as blocks
/// W_0, b_0, W_1, b_1, ... with W_i row-major (rows x cols).
class MlpVectorField final : public VectorField {
 public:
  static constexpr std::size_t kDefaultFrequencies = 6;

  /// All parameters zero.
  MlpVectorField(std::size_t dim, const std::vector<std::size_t>& hidden,
                 std::size_t frequency_count = kDefaultFrequencies);
  /// Builds from explicit layer shapes and parameter blocks, validating the chain.
  MlpVectorField(std::size_t dim, std::vector<LayerShape> layers, std::vector<Vec> parameters);

  /// Uniform(-s, s) initialisation with s = 1/sqrt(fan_in) for weights and biases.
  static MlpVectorField random(std::size_t dim, const std::vector<std::size_t>& hidden, std::uint64_t seed,
                               std::size_t frequency_count = kDefaultFrequencies);

  std::size_t dim() const override { return dim_; }
  std::size_t frequency_count() const noexcept { return frequency_count_; }
  std::vector<double> frequencies() const;
  const std::vector<LayerShape>& layers() const noexcept { return layers_; }
  const std::vector<Vec>& parameters() const noexcept { return params_; }
  std::vector<Vec>& mutable_parameters() noexcept { return params_; }
  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Parameters placed on a tape, either as trainable leaves or as constants.
  /// Both kinds view this model's storage, which must outlive the tape.
  std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const;

  /// Batched forward pass. `x` is d x B (one sample per column), `t` is 1 x B.
  /// Differentiable in x, t and every bound parameter.
  ad::Var forward(ad::Tape& tape, std::span<const ad::Var> params, ad::Var x, ad::Var t) const;

  /// [sin(w_j t)..., cos(w_j t)...].
  Vec time_features(double t) const;

 protected:
  Vec eval_plain(std::span<const double> x, double t) const override;
  ad::Var eval_taped(ad::Tape& tape, ad::Var x, double t) const override;

 private:
  void validate() const;

  std::size_t dim_;
  std::size_t frequency_count_;
  std::vector<LayerShape> layers_;
  std::vector<Vec> params_;
};

/// Velocity from an MLP D that predicts the data endpoint:
/// v(x, t) = (D(x, t) - x) / max(1 - t, kMinRemaining).
/// One Euler step from t to 1 lands exactly on D(x, t).
class DataPredictionField final : public VectorField {
 public:
  static constexpr double kMinRemaining = 1e-3;

  explicit DataPredictionField(MlpVectorField network);

  std::size_t dim() const override { return network_.dim(); }
  const MlpVectorField& network() const noexcept { return network_; }

 protected:
  Vec eval_plain(std::span<const double> x, double t) const override;
  ad::Var eval_taped(ad::Tape& tape, ad::Var x, double t) const override;

 private:
  MlpVectorField network_;
};

}  // namespace mpcflow
