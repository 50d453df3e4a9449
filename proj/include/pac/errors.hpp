// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_ERRORS_HPP
#define PAC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pac {

/// Invalid user configuration (presets, group weights, config files).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt or truncated file contents (checksum or size mismatch).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File written by an incompatible format version.
class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training aborted, e.g. on a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed-point iteration ran out of budget.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace pac

#endif  // PAC_ERRORS_HPP
