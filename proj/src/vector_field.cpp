#include "mpcflow/vector_field.hpp"

#include <string>

#include "mpcflow/errors.hpp"

namespace mpcflow {

namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("vector field: time " + std::to_string(t) + " outside [0, 1]");
}

}  // namespace

Vec VectorField::eval(std::span<const double> x, double t) const {
  if (x.size() != dim()) {
    throw ShapeError("vector field: state has dimension " + std::to_string(x.size()) + ", field expects " +
                     std::to_string(dim()));
  }
  check_time(t);
  ++plain_;
  return eval_plain(x, t);
}

ad::Var VectorField::eval(ad::Tape& tape, ad::Var x, double t) const {
  if (x.shape() != ad::Shape{dim(), 1}) {
    throw ShapeError("vector field: state has shape " + x.shape().str() + ", field expects " +
                     ad::Shape{dim(), 1}.str());
  }
  check_time(t);
  ++taped_;
  return eval_taped(tape, x, t);
}

Vec ZeroField::eval_plain(std::span<const double>, double) const { return Vec(dim_, 0.0); }

ad::Var ZeroField::eval_taped(ad::Tape& tape, ad::Var, double) const { return tape.constant(Vec(dim_, 0.0)); }

Vec ConstantField::eval_plain(std::span<const double>, double) const { return velocity_; }

ad::Var ConstantField::eval_taped(ad::Tape& tape, ad::Var, double) const { return tape.constant(velocity_); }

Vec LinearField::eval_plain(std::span<const double> x, double) const {
  Vec out(x.begin(), x.end());
  for (double& v : out) v *= rate_;
  return out;
}

ad::Var LinearField::eval_taped(ad::Tape&, ad::Var x, double) const { return ad::scale(x, rate_); }

}  // namespace mpcflow
