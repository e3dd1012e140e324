// Copyright 2026 The sharedforest Authors. All Rights Reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace sharedforest {

// Exit-code families surfaced by the CLI: 1 config, 2 data, 3 numeric.
enum class ErrorKind { Config = 1, Data = 2, Numeric = 3 };

enum class DataErrorCode {
  MissingFile,
  RaggedRow,
  MissingColumn,
  ParseError,
  MissingValue,
  NegativeResponse,
  DegenerateResponse,
  SchemaMismatch,
  HashMismatch,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DataError : public Error {
 public:
  DataError(DataErrorCode code, const std::string& what)
      : Error(ErrorKind::Data, what), code_(code) {}
  DataErrorCode code() const noexcept { return code_; }

 private:
  DataErrorCode code_;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// Thrown for structurally invalid trees (degenerate or violated cut intervals).
class InvalidTreeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace sharedforest
