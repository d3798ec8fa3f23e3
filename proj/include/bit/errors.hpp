#pragma once

#include <stdexcept>
#include <string>

namespace bit {

/// Invalid or inconsistent RunConfig / environment settings.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad argument to an otherwise valid object (shape mismatch, alpha out of range, ...).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Operation called in the wrong state (step after done, empty run list, ...).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Replay buffer holds fewer transitions than requested.
struct NotReadyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite loss during an update.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Online/target parameter sets no longer line up.
struct ConsistencyError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace bit
