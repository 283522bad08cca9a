// Copyright 2026 The koopscore Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace koopscore {

// Numeric values are shared with the C API status codes and map onto CLI
// exit codes (format/incompatible errors exit as I/O failures).
enum class ErrorCode : int {
  kValidation = 1,
  kIo = 2,
  kNumerical = 3,
  kFormat = 4,
  kIncompatible = 5,
  kInternal = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(ErrorCode::kValidation, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorCode::kFormat, what) {}
};
struct IncompatibleError : Error {
  explicit IncompatibleError(const std::string& what) : Error(ErrorCode::kIncompatible, what) {}
};

/// Raised when the data cannot support the requested numerical operation.
/// `residual` carries the offending measure when one exists (e.g. the
/// eigen-reconstruction residual of a defective Koopman matrix).
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, double residual = 0.0)
      : Error(ErrorCode::kNumerical, what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace koopscore
