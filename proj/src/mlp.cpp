#include "mpcflow/mlp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mpcflow/errors.hpp"
#include "mpcflow/rng.hpp"

namespace mpcflow {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<LayerShape> chain(std::size_t dim, const std::vector<std::size_t>& hidden, std::size_t frequencies) {
  std::vector<LayerShape> layers;
  std::size_t in = dim + 2 * frequencies;
  for (std::size_t width : hidden) {
    if (width == 0) throw DomainError("mlp: hidden width must be positive");
    layers.push_back({width, in});
    in = width;
  }
  layers.push_back({dim, in});
  return layers;
}

std::vector<Vec> zero_params(const std::vector<LayerShape>& layers) {
  std::vector<Vec> params;
  for (const auto& l : layers) {
    params.emplace_back(l.rows * l.cols, 0.0);
    params.emplace_back(l.rows, 0.0);
  }
  return params;
}

std::size_t infer_frequencies(std::size_t dim, const std::vector<LayerShape>& layers) {
  if (layers.empty()) throw ShapeError("mlp: no layers");
  const std::size_t in = layers.front().cols;
  if (in < dim || (in - dim) % 2 != 0) {
    throw ShapeError("mlp: first layer input width " + std::to_string(in) + " is not d + 2F for d = " +
                     std::to_string(dim));
  }
  return (in - dim) / 2;
}

}  // namespace

MlpVectorField::MlpVectorField(std::size_t dim, const std::vector<std::size_t>& hidden, std::size_t frequency_count)
    : dim_(dim), frequency_count_(frequency_count), layers_(chain(dim, hidden, frequency_count)),
      params_(zero_params(layers_)) {
  if (dim == 0) throw DomainError("mlp: dimension must be positive");
}

MlpVectorField::MlpVectorField(std::size_t dim, std::vector<LayerShape> layers, std::vector<Vec> parameters)
    : dim_(dim), frequency_count_(infer_frequencies(dim, layers)), layers_(std::move(layers)),
      params_(std::move(parameters)) {
  validate();
}

MlpVectorField MlpVectorField::random(std::size_t dim, const std::vector<std::size_t>& hidden, std::uint64_t seed,
                                      std::size_t frequency_count) {
  MlpVectorField model(dim, hidden, frequency_count);
  Rng rng(seed);
  for (std::size_t i = 0; i < model.layers_.size(); ++i) {
    const double s = 1.0 / std::sqrt(static_cast<double>(model.layers_[i].cols));
    for (double& w : model.params_[2 * i]) w = rng.uniform(-s, s);
    for (double& b : model.params_[2 * i + 1]) b = rng.uniform(-s, s);
  }
  return model;
}

void MlpVectorField::validate() const {
  if (dim_ == 0) throw DomainError("mlp: dimension must be positive");
  if (layers_.back().rows != dim_) {
    throw ShapeError("mlp: output width " + std::to_string(layers_.back().rows) + " differs from dimension " +
                     std::to_string(dim_));
  }
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i].cols != layers_[i - 1].rows) {
      throw ShapeError("mlp: layer " + std::to_string(i) + " expects input width " +
                       std::to_string(layers_[i].cols) + " but layer " + std::to_string(i - 1) + " produces " +
                       std::to_string(layers_[i - 1].rows));
    }
  }
  if (params_.size() != 2 * layers_.size()) throw ShapeError("mlp: parameter block count does not match layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (params_[2 * i].size() != layers_[i].rows * layers_[i].cols || params_[2 * i + 1].size() != layers_[i].rows) {
      throw ShapeError("mlp: parameter block sizes of layer " + std::to_string(i) + " do not match its shape");
    }
  }
  if (!all_finite()) throw NonFiniteError("mlp: non-finite parameter");
}

std::vector<double> MlpVectorField::frequencies() const {
  std::vector<double> w(frequency_count_);
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::ldexp(std::numbers::pi, static_cast<int>(j));
  return w;
}

std::size_t MlpVectorField::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

bool MlpVectorField::all_finite() const {
  for (const auto& p : params_) {
    for (double v : p) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

Vec MlpVectorField::time_features(double t) const {
  const auto w = frequencies();
  Vec f(2 * w.size());
  for (std::size_t j = 0; j < w.size(); ++j) {
    f[j] = std::sin(w[j] * t);
    f[w.size() + j] = std::cos(w[j] * t);
  }
  return f;
}

std::vector<ad::Var> MlpVectorField::bind(ad::Tape& tape, bool trainable) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const ad::Shape ws{layers_[i].rows, layers_[i].cols};
    const ad::Shape bs{layers_[i].rows, 1};
    if (trainable) {
      vars.push_back(tape.leaf_view(params_[2 * i], ws));
      vars.push_back(tape.leaf_view(params_[2 * i + 1], bs));
    } else {
      vars.push_back(tape.constant_view(params_[2 * i], ws));
      vars.push_back(tape.constant_view(params_[2 * i + 1], bs));
    }
  }
  return vars;
}

ad::Var MlpVectorField::forward(ad::Tape& tape, std::span<const ad::Var> params, ad::Var x, ad::Var t) const {
  if (params.size() != params_.size()) throw ShapeError("mlp: wrong number of bound parameter blocks");
  if (x.shape().rows != dim_ || t.shape().rows != 1 || t.shape().cols != x.shape().cols) {
    throw ShapeError("mlp: forward expects x of shape (" + std::to_string(dim_) + "xB) and t of shape (1xB), got " +
                     x.shape().str() + " and " + t.shape().str());
  }
  ad::Var h = x;
  if (frequency_count_ > 0) {
    ad::Var w = tape.constant(frequencies(), ad::Shape{frequency_count_, 1});
    ad::Var phase = ad::matmul(w, t);
    h = ad::concat({x, ad::sin(phase), ad::cos(phase)});
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = ad::add_bias(ad::matmul(params[2 * i], h), params[2 * i + 1]);
    if (i + 1 < layers_.size()) h = ad::tanh(h);
  }
  return h;
}

Vec MlpVectorField::eval_plain(std::span<const double> x, double t) const {
  Eigen::VectorXd h(static_cast<Eigen::Index>(dim_ + 2 * frequency_count_));
  for (std::size_t i = 0; i < dim_; ++i) h[static_cast<Eigen::Index>(i)] = x[i];
  const Vec f = time_features(t);
  for (std::size_t i = 0; i < f.size(); ++i) h[static_cast<Eigen::Index>(dim_ + i)] = f[i];
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto rows = static_cast<Eigen::Index>(layers_[i].rows);
    const auto cols = static_cast<Eigen::Index>(layers_[i].cols);
    Eigen::Map<const RowMatrix> w(params_[2 * i].data(), rows, cols);
    Eigen::Map<const Eigen::VectorXd> b(params_[2 * i + 1].data(), rows);
    Eigen::VectorXd next = w * h + b;
    if (i + 1 < layers_.size()) next = next.array().tanh();
    h = std::move(next);
  }
  return Vec(h.data(), h.data() + h.size());
}

ad::Var MlpVectorField::eval_taped(ad::Tape& tape, ad::Var x, double t) const {
  const auto params = bind(tape, false);
  return forward(tape, params, x, tape.scalar(t));
}

DataPredictionField::DataPredictionField(MlpVectorField network) : network_(std::move(network)) {}

Vec DataPredictionField::eval_plain(std::span<const double> x, double t) const {
  Vec v = network_.eval(x, t);
  const double rate = 1.0 / std::max(1.0 - t, kMinRemaining);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - x[i]) * rate;
  return v;
}

ad::Var DataPredictionField::eval_taped(ad::Tape& tape, ad::Var x, double t) const {
  const double rate = 1.0 / std::max(1.0 - t, kMinRemaining);
  return ad::scale(ad::sub(network_.eval(tape, x, t), x), rate);
}

}  // namespace mpcflow
