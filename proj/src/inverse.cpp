#include "mpcflow/inverse.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "mpcflow/errors.hpp"
#include "mpcflow/rng.hpp"

namespace mpcflow {

std::string to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::Identity: return "identity";
    case OperatorKind::Mask: return "mask";
    case OperatorKind::BoxMask: return "box-mask";
    case OperatorKind::GaussianBlur: return "gaussian-blur";
    case OperatorKind::Downsample2: return "downsample2";
    case OperatorKind::Radon: return "radon";
    case OperatorKind::NonlinearBlur: return "nonlinear-blur";
  }
  return "?";
}

Vec ForwardOperator::apply(std::span<const double> x) const {
  if (x.size() != input_dim()) {
    throw ShapeError(to_string(kind_) + ": input has dimension " + std::to_string(x.size()) + ", expected " +
                     std::to_string(input_dim()));
  }
  Vec y(output_dim());
  forward_impl(x, y);
  return y;
}

Vec ForwardOperator::apply_adjoint(std::span<const double> y) const {
  if (!is_linear()) throw DomainError("nonlinear operator has no adjoint");
  if (y.size() != output_dim()) {
    throw ShapeError(to_string(kind_) + ": measurement has dimension " + std::to_string(y.size()) + ", expected " +
                     std::to_string(output_dim()));
  }
  Vec x(input_dim(), 0.0);
  adjoint_impl(y, x);
  return x;
}

ad::Var ForwardOperator::apply(ad::Tape& tape, ad::Var x) const {
  if (x.shape() != ad::Shape{input_dim(), 1}) {
    throw ShapeError(to_string(kind_) + ": input has shape " + x.shape().str() + ", expected " +
                     ad::Shape{input_dim(), 1}.str());
  }
  return taped_impl(tape, x);
}

Vec ForwardOperator::materialize() const {
  if (!is_linear()) throw DomainError("nonlinear operator has no matrix");
  const std::size_t m = output_dim();
  const std::size_t n = input_dim();
  Vec matrix(m * n, 0.0);
  Vec basis(n, 0.0);
  Vec column(m);
  for (std::size_t j = 0; j < n; ++j) {
    basis[j] = 1.0;
    forward_impl(basis, column);
    for (std::size_t i = 0; i < m; ++i) matrix[i * n + j] = column[i];
    basis[j] = 0.0;
  }
  return matrix;
}

Vec ForwardOperator::observation_image(std::span<const double> y) const { return apply_adjoint(y); }

namespace {

// Linear operators double as tape primitives.
class LinearOperator : public ForwardOperator, public ad::LinearMap {
 public:
  std::size_t in_dim() const override { return input_dim(); }
  std::size_t out_dim() const override { return output_dim(); }
  void forward(std::span<const double> in, std::span<double> out) const override { forward_impl(in, out); }
  void adjoint(std::span<const double> in, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
    adjoint_impl(in, out);
  }

 protected:
  using ForwardOperator::ForwardOperator;
  ad::Var taped_impl(ad::Tape&, ad::Var x) const override { return ad::apply_linear(*this, x); }
};

class IdentityOperator final : public LinearOperator {
 public:
  IdentityOperator(std::size_t h, std::size_t w) : LinearOperator(OperatorKind::Identity, h, w) {}
  std::size_t output_dim() const override { return input_dim(); }
  Vec observation_image(std::span<const double> y) const override { return {y.begin(), y.end()}; }

 protected:
  void forward_impl(std::span<const double> x, std::span<double> y) const override {
    std::copy(x.begin(), x.end(), y.begin());
  }
  void adjoint_impl(std::span<const double> y, std::span<double> x) const override {
    std::copy(y.begin(), y.end(), x.begin());
  }
  ad::Var taped_impl(ad::Tape&, ad::Var x) const override { return x; }
};

// Keeps a sorted subset of pixels.
class SelectionOperator final : public LinearOperator {
 public:
  SelectionOperator(OperatorKind kind, std::size_t h, std::size_t w, std::vector<std::size_t> kept)
      : LinearOperator(kind, h, w), kept_(std::move(kept)) {
    std::sort(kept_.begin(), kept_.end());
    kept_.erase(std::unique(kept_.begin(), kept_.end()), kept_.end());
    if (!kept_.empty() && kept_.back() >= h * w) {
      throw DomainError("mask: kept index " + std::to_string(kept_.back()) + " outside an image of " +
                        std::to_string(h * w) + " pixels");
    }
  }

  std::size_t output_dim() const override { return kept_.size(); }

  std::optional<Image> mask_bitmap() const override {
    Image img{height(), width(), Vec(input_dim(), 0.0)};
    for (std::size_t i : kept_) img.pixels[i] = 1.0;
    return img;
  }

 protected:
  void forward_impl(std::span<const double> x, std::span<double> y) const override {
    for (std::size_t k = 0; k < kept_.size(); ++k) y[k] = x[kept_[k]];
  }
  void adjoint_impl(std::span<const double> y, std::span<double> x) const override {
    for (std::size_t k = 0; k < kept_.size(); ++k) x[kept_[k]] += y[k];
  }

 private:
  std::vector<std::size_t> kept_;
};

class BlurOperator final : public LinearOperator {
 public:
  BlurOperator(std::size_t h, std::size_t w, double sigma) : LinearOperator(OperatorKind::GaussianBlur, h, w) {
    if (!(sigma > 0.0)) throw DomainError("gaussian-blur: sigma must be positive");
    radius_ = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    const std::ptrdiff_t side = 2 * radius_ + 1;
    kernel_.resize(static_cast<std::size_t>(side * side));
    double total = 0.0;
    for (std::ptrdiff_t i = -radius_; i <= radius_; ++i) {
      for (std::ptrdiff_t j = -radius_; j <= radius_; ++j) {
        const double v = std::exp(-static_cast<double>(i * i + j * j) / (2.0 * sigma * sigma));
        kernel_[static_cast<std::size_t>((i + radius_) * side + (j + radius_))] = v;
        total += v;
      }
    }
    for (double& v : kernel_) v /= total;
  }

  std::size_t output_dim() const override { return input_dim(); }
  Vec observation_image(std::span<const double> y) const override { return {y.begin(), y.end()}; }

 protected:
  // y[p] = sum_o K[o] x[p + o], zero outside the image.
  void forward_impl(std::span<const double> x, std::span<double> y) const override {
    sweep(x, y, false);
  }
  // Transpose: x[p + o] += K[o] y[p].
  void adjoint_impl(std::span<const double> y, std::span<double> x) const override { sweep(y, x, true); }

 private:
  void sweep(std::span<const double> in, std::span<double> out, bool transpose) const {
    const auto h = static_cast<std::ptrdiff_t>(height());
    const auto w = static_cast<std::ptrdiff_t>(width());
    const std::ptrdiff_t side = 2 * radius_ + 1;
    if (!transpose) std::fill(out.begin(), out.end(), 0.0);
    for (std::ptrdiff_t r = 0; r < h; ++r) {
      for (std::ptrdiff_t c = 0; c < w; ++c) {
        const auto p = static_cast<std::size_t>(r * w + c);
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius_; i <= radius_; ++i) {
          const std::ptrdiff_t rr = r + i;
          if (rr < 0 || rr >= h) continue;
          for (std::ptrdiff_t j = -radius_; j <= radius_; ++j) {
            const std::ptrdiff_t cc = c + j;
            if (cc < 0 || cc >= w) continue;
            const double k = kernel_[static_cast<std::size_t>((i + radius_) * side + (j + radius_))];
            const auto q = static_cast<std::size_t>(rr * w + cc);
            if (transpose) {
              out[q] += k * in[p];
            } else {
              acc += k * in[q];
            }
          }
        }
        if (!transpose) out[p] = acc;
      }
    }
  }

  std::ptrdiff_t radius_ = 0;
  std::vector<double> kernel_;
};

// Sparse ray-sum matrix in CSR form.
class RadonOperator final : public LinearOperator {
 public:
  RadonOperator(std::size_t h, std::size_t w, std::size_t angles)
      : LinearOperator(OperatorKind::Radon, h, w), angles_(angles) {
    if (angles == 0) throw DomainError("radon: need at least one angle");
    const std::size_t rows = angles * w;
    std::vector<std::vector<std::size_t>> members(rows);
    const double half_w = static_cast<double>(w) / 2.0;
    const double half_h = static_cast<double>(h) / 2.0;
    for (std::size_t a = 0; a < angles; ++a) {
      const double theta = std::numbers::pi * static_cast<double>(a) / static_cast<double>(angles);
      const double ct = std::cos(theta);
      const double st = std::sin(theta);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const double xc = static_cast<double>(c) + 0.5 - half_w;
          const double yc = half_h - (static_cast<double>(r) + 0.5);
          const double s = xc * ct + yc * st;
          const double bin = std::floor(s + half_w);
          if (bin < 0.0 || bin >= static_cast<double>(w)) continue;
          members[a * w + static_cast<std::size_t>(bin)].push_back(r * w + c);
        }
      }
    }
    row_start_.push_back(0);
    for (const auto& m : members) {
      cols_.insert(cols_.end(), m.begin(), m.end());
      row_start_.push_back(cols_.size());
    }
  }

  std::size_t output_dim() const override { return row_start_.size() - 1; }

  Vec observation_image(std::span<const double> y) const override {
    Vec img = apply_adjoint(y);
    for (double& v : img) v /= static_cast<double>(angles_ * width());
    return img;
  }

  std::size_t row_nonzeros(std::size_t row) const { return row_start_[row + 1] - row_start_[row]; }

 protected:
  void forward_impl(std::span<const double> x, std::span<double> y) const override {
    for (std::size_t i = 0; i + 1 < row_start_.size(); ++i) {
      double acc = 0.0;
      for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) acc += x[cols_[k]];
      y[i] = acc;
    }
  }
  void adjoint_impl(std::span<const double> y, std::span<double> x) const override {
    for (std::size_t i = 0; i + 1 < row_start_.size(); ++i) {
      for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) x[cols_[k]] += y[i];
    }
  }

 private:
  std::size_t angles_;
  std::vector<std::size_t> row_start_;
  std::vector<std::size_t> cols_;
};

class NonlinearBlurOperator final : public ForwardOperator {
 public:
  NonlinearBlurOperator(std::size_t h, std::size_t w, double sigma, double gamma)
      : ForwardOperator(OperatorKind::NonlinearBlur, h, w), blur_(h, w, sigma), gamma_(gamma) {}

  std::size_t output_dim() const override { return input_dim(); }
  bool is_linear() const override { return false; }
  Vec observation_image(std::span<const double> y) const override { return {y.begin(), y.end()}; }

 protected:
  void forward_impl(std::span<const double> x, std::span<double> y) const override {
    blur_.forward(x, y);
    for (double& v : y) v = std::tanh(gamma_ * v);
  }
  void adjoint_impl(std::span<const double>, std::span<double>) const override {
    throw DomainError("nonlinear operator has no adjoint");
  }
  ad::Var taped_impl(ad::Tape&, ad::Var x) const override {
    return ad::tanh(ad::scale(ad::apply_linear(blur_, x), gamma_));
  }

 private:
  BlurOperator blur_;
  double gamma_;
};

void check_image_dims(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw DomainError("operator: image dimensions must be positive");
}

}  // namespace

OperatorPtr make_identity(std::size_t height, std::size_t width) {
  check_image_dims(height, width);
  return std::make_shared<IdentityOperator>(height, width);
}

OperatorPtr make_mask(std::size_t height, std::size_t width, std::vector<std::size_t> kept) {
  check_image_dims(height, width);
  return std::make_shared<SelectionOperator>(OperatorKind::Mask, height, width, std::move(kept));
}

OperatorPtr make_random_mask(std::size_t height, std::size_t width, double keep_fraction, std::uint64_t seed) {
  check_image_dims(height, width);
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) throw DomainError("mask: keep_fraction must lie in [0, 1]");
  const std::size_t n = height * width;
  const auto keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first `keep` slots are a uniform subset.
  for (std::size_t i = 0; i < keep; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
  order.resize(keep);
  return make_mask(height, width, std::move(order));
}

OperatorPtr make_box_mask(std::size_t height, std::size_t width, std::size_t box) {
  check_image_dims(height, width);
  if (box > height || box > width) throw DomainError("box-mask: box larger than the image");
  const std::size_t r0 = (height - box) / 2;
  const std::size_t c0 = (width - box) / 2;
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const bool inside = r >= r0 && r < r0 + box && c >= c0 && c < c0 + box;
      if (!inside) kept.push_back(r * width + c);
    }
  }
  return std::make_shared<SelectionOperator>(OperatorKind::BoxMask, height, width, std::move(kept));
}

OperatorPtr make_gaussian_blur(std::size_t height, std::size_t width, double sigma) {
  check_image_dims(height, width);
  return std::make_shared<BlurOperator>(height, width, sigma);
}

OperatorPtr make_downsample2(std::size_t height, std::size_t width) {
  check_image_dims(height, width);
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < height; r += 2) {
    for (std::size_t c = 0; c < width; c += 2) kept.push_back(r * width + c);
  }
  return std::make_shared<SelectionOperator>(OperatorKind::Downsample2, height, width, std::move(kept));
}

OperatorPtr make_radon(std::size_t height, std::size_t width, std::size_t angles) {
  check_image_dims(height, width);
  return std::make_shared<RadonOperator>(height, width, angles);
}

OperatorPtr make_nonlinear_blur(std::size_t height, std::size_t width, double sigma, double gamma) {
  check_image_dims(height, width);
  return std::make_shared<NonlinearBlurOperator>(height, width, sigma, gamma);
}

OperatorPtr make_operator(const OperatorSpec& spec, std::size_t height, std::size_t width) {
  if (spec.op == "identity") return make_identity(height, width);
  if (spec.op == "mask") return make_random_mask(height, width, spec.keep_fraction, spec.seed);
  if (spec.op == "box-mask") return make_box_mask(height, width, spec.box);
  if (spec.op == "gaussian-blur") return make_gaussian_blur(height, width, spec.blur_sigma);
  if (spec.op == "downsample2") return make_downsample2(height, width);
  if (spec.op == "radon") return make_radon(height, width, spec.angles);
  if (spec.op == "nonlinear-blur") return make_nonlinear_blur(height, width, spec.blur_sigma, spec.gamma);
  throw DomainError("unknown operator '" + spec.op + "'");
}

Observation simulate_measurement(const OperatorPtr& op, std::span<const double> x_true, double sigma,
                                 std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw DomainError("simulate_measurement: sigma must be >= 0");
  Observation obs{op->apply(x_true), sigma, op, Vec(x_true.begin(), x_true.end())};
  if (sigma > 0.0) {
    Rng rng(seed);
    for (double& v : obs.y) v += sigma * rng.normal();
  }
  return obs;
}

GaussianLikelihoodLoss::GaussianLikelihoodLoss(Observation obs, LikelihoodScale scale) : obs_(std::move(obs)) {
  if (!obs_.op) throw DomainError("terminal loss: observation has no operator");
  if (obs_.y.size() != obs_.op->output_dim()) {
    throw ShapeError("terminal loss: measurement has dimension " + std::to_string(obs_.y.size()) +
                     ", operator produces " + std::to_string(obs_.op->output_dim()));
  }
  if (!(obs_.sigma >= 0.0)) throw DomainError("terminal loss: sigma must be >= 0");
  if (scale == LikelihoodScale::Unscaled) {
    weight_ = 1.0;
  } else {
    weight_ = obs_.sigma > 0.0 ? 1.0 / (2.0 * obs_.sigma * obs_.sigma) : 0.5;
  }
}

double GaussianLikelihoodLoss::value(std::span<const double> x) const {
  const Vec ax = obs_.op->apply(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) {
    const double r = ax[i] - obs_.y[i];
    acc += r * r;
  }
  return weight_ * acc;
}

ad::Var GaussianLikelihoodLoss::value(ad::Tape& tape, ad::Var x) const {
  ad::Var residual = ad::sub(obs_.op->apply(tape, x), tape.constant_view(obs_.y, ad::Shape{obs_.y.size(), 1}));
  return ad::scale(ad::squared_norm(residual), weight_);
}

double TargetDistanceLoss::value(std::span<const double> x) const {
  if (x.size() != target_.size()) throw ShapeError("target loss: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - target_[i];
    acc += r * r;
  }
  return acc;
}

ad::Var TargetDistanceLoss::value(ad::Tape& tape, ad::Var x) const {
  return ad::squared_norm(ad::sub(x, tape.constant_view(target_, ad::Shape{target_.size(), 1})));
}

LossPtr terminal_loss(Observation obs, LikelihoodScale scale) {
  return std::make_shared<GaussianLikelihoodLoss>(std::move(obs), scale);
}

LossPtr corner_target_loss(Vec target) { return std::make_shared<TargetDistanceLoss>(std::move(target)); }

}  // namespace mpcflow
