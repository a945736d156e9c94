// Copyright 2026 The vqforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace vqforge {

// Base of every error thrown by the library. Callers that only care about
// "something went wrong" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape mismatch, wrong dimension).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Bad data handed in by the user (non-finite values, empty sets, bad sizes).
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes in a file or blob. Carries the offset where parsing stopped.
class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : InputError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Capacity matching has no integer solution or a budget constraint is broken.
class InfeasibleBudget : public Error {
 public:
  using Error::Error;
};

// Unknown corpus kind, unreadable config, bad flag combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::int64_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}

  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace vqforge
