#pragma once

#include <stdexcept>
#include <string>

namespace vonctl {

/// Caller broke a documented precondition (dimension mismatch, bad index, ...).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The implicit damping factor of an oscillator step has a zero diagonal entry.
class SingularityError : public std::runtime_error {
 public:
  SingularityError(int index, double value);
  int index() const { return index_; }

 private:
  int index_;
};

/// A rollout produced a non-finite state.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(int step, const std::string& what_arg = "");
  int step() const { return step_; }

 private:
  int step_;
};

/// Malformed or truncated file / message.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionMismatch : public FormatError {
 public:
  VersionMismatch(const std::string& what, int found, int expected);
};

/// Training produced a NaN loss.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(int epoch, int step);
  int epoch() const { return epoch_; }
  int step() const { return step_; }

 private:
  int epoch_;
  int step_;
};

}  // namespace vonctl
