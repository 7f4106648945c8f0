/*
 * Copyright 2026 The scotlift Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace scotlift {

// Error taxonomy. The CLI maps each family onto an exit code:
//   ContractError, ConfigError            -> 2
//   IoError, FormatError, CorruptionError,
//   LookupError                           -> 3
//   NumericalError (divergence/stability) -> 4
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A configuration value is invalid. key() names the offending field.
class ConfigError : public ContractError {
 public:
  ConfigError(std::string key, const std::string& what)
      : ContractError(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CorruptionError : public DataError {
 public:
  using DataError::DataError;
};

class LookupError : public DataError {
 public:
  using DataError::DataError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Non-finite forward value (grad_check, rollout, training loss).
class EvaluationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(long step, const std::string& what)
      : NumericalError("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

// CFL or explicit-diffusion limit exceeded in the synthetic solvers.
class StabilityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename... Args>
inline void require(bool cond, Args&&... args) {
  if (!cond) throw ContractError(detail::concat(std::forward<Args>(args)...));
}

}  // namespace scotlift
