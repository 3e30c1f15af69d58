#include "vonctl/error.hpp"

namespace vonctl {

SingularityError::SingularityError(int index, double value)
    : std::runtime_error("implicit damping factor is singular at diagonal entry " + std::to_string(index) +
                         " (value " + std::to_string(value) + ")"),
      index_(index) {}

DivergenceError::DivergenceError(int step, const std::string& what_arg)
    : std::runtime_error("rollout diverged at step " + std::to_string(step) +
                         (what_arg.empty() ? std::string() : ": " + what_arg)),
      step_(step) {}

VersionMismatch::VersionMismatch(const std::string& what, int found, int expected)
    : FormatError(what + ": version " + std::to_string(found) + " (expected " + std::to_string(expected) + ")") {}

TrainingDivergence::TrainingDivergence(int epoch, int step)
    : std::runtime_error("training loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step)),
      epoch_(epoch),
      step_(step) {}

}  // namespace vonctl
