#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mpcflow {

/// Operand shapes are incompatible for a primitive.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value was outside the domain an operation accepts (t outside [0,1], empty batch, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or infinity appeared where a finite number is required.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative solver failure. Carries the outer and inner iteration where it happened.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, std::size_t outer, std::size_t inner)
      : std::runtime_error(what + " (outer step " + std::to_string(outer) + ", inner iteration " +
                           std::to_string(inner) + ")"),
        outer_(outer),
        inner_(inner) {}

  std::size_t outer_step() const noexcept { return outer_; }
  std::size_t inner_iteration() const noexcept { return inner_; }

 private:
  std::size_t outer_;
  std::size_t inner_;
};

/// Binary or text file did not match its declared format.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, UnsupportedFormat, MalformedHeader, Io };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Run configuration failed validation. `field` is a dotted path into the config document.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace mpcflow
