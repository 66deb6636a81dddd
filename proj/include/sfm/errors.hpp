#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sfm {

// Argument outside an operation's documented domain (shapes, ranges, lengths).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Data that is structurally fine but numerically unusable (NaN/Inf pixels, ...).
class InvalidInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivisionByZero : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class CodecLoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InternalConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ExternalAttackError : public std::runtime_error {
 public:
  enum class Reason { Unreachable, Timeout, MalformedOutput, SizeMismatch, CommandFailed };

  ExternalAttackError(Reason reason, const std::string& what)
      : std::runtime_error(what), reason_(reason) {}

  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& term, const std::string& what)
      : std::runtime_error(what), term_(term) {}

  // Name of the loss term (or "loss") that went non-finite.
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(const std::string& what, std::vector<double> loss_curve)
      : std::runtime_error(what), loss_curve_(std::move(loss_curve)) {}

  const std::vector<double>& loss_curve() const noexcept { return loss_curve_; }

 private:
  std::vector<double> loss_curve_;
};

}  // namespace sfm
