#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mpcflow/tape.hpp"

namespace mpcflow {

using Vec = std::vector<double>;

/// How often a field was evaluated, split by whether the evaluation was
/// recorded on a tape (and so sits inside a differentiated graph).
struct EvalCounts {
  std::uint64_t plain = 0;
  std::uint64_t taped = 0;
};

/// Time-dependent velocity v(x, t) on R^d, t in [0, 1].
///
/// Evaluation is const and thread-safe. The counters are instrumentation only;
/// copies start from zero.
class VectorField {
 public:
  VectorField() = default;
  VectorField(const VectorField&) {}
  VectorField& operator=(const VectorField&) { return *this; }
  virtual ~VectorField() = default;

  virtual std::size_t dim() const = 0;

  /// Throws ShapeError on a dimension mismatch and DomainError for t outside [0,1].
  Vec eval(std::span<const double> x, double t) const;
  /// Records the evaluation on `x`'s tape. `x` must be a d x 1 column.
  ad::Var eval(ad::Tape& tape, ad::Var x, double t) const;

  EvalCounts counts() const noexcept { return {plain_.load(), taped_.load()}; }
  void reset_counts() const noexcept {
    plain_ = 0;
    taped_ = 0;
  }

 protected:
  virtual Vec eval_plain(std::span<const double> x, double t) const = 0;
  virtual ad::Var eval_taped(ad::Tape& tape, ad::Var x, double t) const = 0;

 private:
  mutable std::atomic<std::uint64_t> plain_{0};
  mutable std::atomic<std::uint64_t> taped_{0};
};

/// v == 0.
class ZeroField final : public VectorField {
 public:
  explicit ZeroField(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }

 protected:
  Vec eval_plain(std::span<const double> x, double t) const override;
  ad::Var eval_taped(ad::Tape& tape, ad::Var x, double t) const override;

 private:
  std::size_t dim_;
};

/// v == c.
class ConstantField final : public VectorField {
 public:
  explicit ConstantField(Vec velocity) : velocity_(std::move(velocity)) {}
  std::size_t dim() const override { return velocity_.size(); }

 protected:
  Vec eval_plain(std::span<const double> x, double t) const override;
  ad::Var eval_taped(ad::Tape& tape, ad::Var x, double t) const override;

 private:
  Vec velocity_;
};

/// v(x, t) = rate * x.
class LinearField final : public VectorField {
 public:
  LinearField(std::size_t dim, double rate) : dim_(dim), rate_(rate) {}
  std::size_t dim() const override { return dim_; }

 protected:
  Vec eval_plain(std::span<const double> x, double t) const override;
  ad::Var eval_taped(ad::Tape& tape, ad::Var x, double t) const override;

 private:
  std::size_t dim_;
  double rate_;
};

}  // namespace mpcflow
