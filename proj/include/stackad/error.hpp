/*
 * Copyright 2026 The stackad Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace stackad {

// Exit codes used by the command-line tool. Each exception type below maps
// to exactly one of them.
enum class ExitCode : int {
  kOk = 0,
  kValidation = 1,
  kMissingInput = 2,
  kNumeric = 3,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const { return ExitCode::kValidation; }
};

// Malformed or inconsistent SCLP container.
class CodecError : public Error {
 public:
  using Error::Error;
};

// Bad arguments, bad config, violated preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class MissingInputError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kMissingInput; }
};

// NaN / Inf detected where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kNumeric; }
};

}  // namespace stackad
