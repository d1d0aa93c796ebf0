#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace normlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A group whose norm (or std) is zero, so its normalization is undefined.
class DegenerateWeightError : public Error {
 public:
  DegenerateWeightError(std::string group_id, const std::string& what)
      : Error("degenerate weight group '" + group_id + "': " + what),
        group_id_(std::move(group_id)) {}

  const std::string& group_id() const noexcept { return group_id_; }

 private:
  std::string group_id_;
};

class UnsupportedVariantError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InvalidHyperparameterError : public Error {
 public:
  using Error::Error;
};

/// Raised when a gradient, a weight or an optimizer moment stops being finite.
class OverflowError : public Error {
 public:
  OverflowError(std::string group_id, std::size_t step, const std::string& what)
      : Error("float overflow in group '" + group_id + "' at step " +
              std::to_string(step) + ": " + what),
        group_id_(std::move(group_id)),
        step_(step) {}

  const std::string& group_id() const noexcept { return group_id_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::string group_id_;
  std::size_t step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace normlab
