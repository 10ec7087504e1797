#pragma once

#include <stdexcept>
#include <string>

namespace sit {

/// Bad user input: unknown keys, missing files named in a config,
/// inconsistent mode inputs. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated call contract: shape mismatch, timestep out of range,
/// zero-norm vector where a direction is required.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure while running: I/O, worker process death, non-finite state.
/// The CLI maps this to exit code 3.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sit
