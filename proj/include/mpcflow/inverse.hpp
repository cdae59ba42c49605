#pragma once

// Forward operators A, simulated measurements y = A(x) + sigma * g and the
// terminal losses used as guidance objectives.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpcflow/image_io.hpp"
#include "mpcflow/tape.hpp"

namespace mpcflow {

using Vec = std::vector<double>;

enum class OperatorKind { Identity, Mask, BoxMask, GaussianBlur, Downsample2, Radon, NonlinearBlur };

std::string to_string(OperatorKind kind);

class ForwardOperator {
 public:
  virtual ~ForwardOperator() = default;

  OperatorKind kind() const noexcept { return kind_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t input_dim() const noexcept { return height_ * width_; }
  virtual std::size_t output_dim() const = 0;
  virtual bool is_linear() const { return true; }

  Vec apply(std::span<const double> x) const;
  /// Throws DomainError("nonlinear operator has no adjoint") for nonlinear kinds.
  Vec apply_adjoint(std::span<const double> y) const;
  ad::Var apply(ad::Tape& tape, ad::Var x) const;

  /// Dense row-major (output_dim x input_dim) matrix of a linear operator.
  Vec materialize() const;
  /// A measurement rendered in image space for inspection: the measurement
  /// itself when it is image-shaped, otherwise the adjoint (zero-filled for
  /// selections, a normalised backprojection for the Radon transform).
  virtual Vec observation_image(std::span<const double> y) const;
  /// 1 for observed pixels, 0 otherwise; only selection operators have one.
  virtual std::optional<Image> mask_bitmap() const { return std::nullopt; }

 protected:
  ForwardOperator(OperatorKind kind, std::size_t height, std::size_t width)
      : kind_(kind), height_(height), width_(width) {}

  virtual void forward_impl(std::span<const double> x, std::span<double> y) const = 0;
  virtual void adjoint_impl(std::span<const double> y, std::span<double> x) const = 0;
  virtual ad::Var taped_impl(ad::Tape& tape, ad::Var x) const = 0;

 private:
  OperatorKind kind_;
  std::size_t height_;
  std::size_t width_;
};

using OperatorPtr = std::shared_ptr<const ForwardOperator>;

/// Operator parameters as they appear in a run configuration.
struct OperatorSpec {
  std::string op = "identity";
  /// Fraction of pixels kept by "mask" (0.3 means 70% removed).
  double keep_fraction = 0.3;
  std::uint64_t seed = 0;
  /// Side of the centred box removed by "box-mask".
  std::size_t box = 8;
  double blur_sigma = 1.0;
  std::size_t angles = 18;
  double gamma = 2.0;
};

OperatorPtr make_identity(std::size_t height, std::size_t width);
OperatorPtr make_mask(std::size_t height, std::size_t width, std::vector<std::size_t> kept);
/// Keeps round(keep_fraction * h * w) pixels chosen by a seeded shuffle.
OperatorPtr make_random_mask(std::size_t height, std::size_t width, double keep_fraction, std::uint64_t seed);
/// Removes a centred box x box square.
OperatorPtr make_box_mask(std::size_t height, std::size_t width, std::size_t box);
/// Zero-padded convolution with a normalised Gaussian, radius ceil(3 sigma).
OperatorPtr make_gaussian_blur(std::size_t height, std::size_t width, double sigma);
/// Keeps pixels with even row and even column.
OperatorPtr make_downsample2(std::size_t height, std::size_t width);
/// Pixel-midpoint ray sums over `angles` equispaced angles in [0, pi) with
/// `width` unit-width detector bins.
OperatorPtr make_radon(std::size_t height, std::size_t width, std::size_t angles);
/// tanh(gamma * blur(x)).
OperatorPtr make_nonlinear_blur(std::size_t height, std::size_t width, double sigma, double gamma);
/// Dispatches on spec.op: identity, mask, box-mask, gaussian-blur,
/// downsample2, radon, nonlinear-blur. Throws DomainError for unknown tags.
OperatorPtr make_operator(const OperatorSpec& spec, std::size_t height, std::size_t width);

struct Observation {
  Vec y;
  double sigma = 0.0;
  OperatorPtr op;
  std::optional<Vec> x_true;
};

/// y = A(x_true) + sigma * g, g standard normal from Rng(seed).
Observation simulate_measurement(const OperatorPtr& op, std::span<const double> x_true, double sigma,
                                 std::uint64_t seed);

/// Scalar objective Phi on the terminal state.
class TerminalLoss {
 public:
  virtual ~TerminalLoss() = default;
  virtual std::size_t dim() const = 0;
  virtual double value(std::span<const double> x) const = 0;
  virtual ad::Var value(ad::Tape& tape, ad::Var x) const = 0;
};

using LossPtr = std::shared_ptr<const TerminalLoss>;

/// Scaling of the Gaussian likelihood loss.
enum class LikelihoodScale {
  /// 1 / (2 sigma^2), or 1/2 when sigma == 0.
  InverseVariance,
  /// Plain ||A(x) - y||^2.
  Unscaled,
};

/// weight * ||A(x) - y||^2 with the weight set by `scale`.
class GaussianLikelihoodLoss final : public TerminalLoss {
 public:
  explicit GaussianLikelihoodLoss(Observation obs, LikelihoodScale scale = LikelihoodScale::InverseVariance);

  std::size_t dim() const override { return obs_.op->input_dim(); }
  double value(std::span<const double> x) const override;
  ad::Var value(ad::Tape& tape, ad::Var x) const override;

  double weight() const noexcept { return weight_; }
  const Observation& observation() const noexcept { return obs_; }

 private:
  Observation obs_;
  double weight_;
};

/// ||x - target||^2.
class TargetDistanceLoss final : public TerminalLoss {
 public:
  explicit TargetDistanceLoss(Vec target) : target_(std::move(target)) {}

  std::size_t dim() const override { return target_.size(); }
  double value(std::span<const double> x) const override;
  ad::Var value(ad::Tape& tape, ad::Var x) const override;

  const Vec& target() const noexcept { return target_; }

 private:
  Vec target_;
};

LossPtr terminal_loss(Observation obs, LikelihoodScale scale = LikelihoodScale::InverseVariance);
LossPtr corner_target_loss(Vec target);

}  // namespace mpcflow
