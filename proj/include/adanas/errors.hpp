// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adanas {

enum class ErrorCategory {
  dimension,
  config,
  validation,
  data,
  degenerate,
  training,
  guard,
};

std::string_view category_name(ErrorCategory c) noexcept;

/// Base of every error raised by the library. The category is what the CLI
/// maps to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error(ErrorCategory::dimension, m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorCategory::config, m) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& m) : Error(ErrorCategory::validation, m) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& m) : Error(ErrorCategory::data, m) {}
};

/// Degenerate batch (batchnorm over fewer than two values) or degenerate task
/// (single-class training data).
class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& m) : Error(ErrorCategory::degenerate, m) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& m) : Error(ErrorCategory::training, m) {}
};

class GuardError : public Error {
 public:
  explicit GuardError(const std::string& m) : Error(ErrorCategory::guard, m) {}
};

}  // namespace adanas
