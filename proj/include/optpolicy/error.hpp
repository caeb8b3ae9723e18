#pragma once

#include <stdexcept>
#include <string>

namespace optpolicy {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kInput = 2,
  kConfig = 3,
  kInternal = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Bad data: shape mismatches, non-finite values, malformed files.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ExitCode::kInput, what) {}
};

// Malformed tree documents and delimited tables.
class ParseError : public InputError {
 public:
  explicit ParseError(const std::string& what) : InputError(what) {}
};

// Bad settings: empty grids, unknown ids, limits exceeded.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

// A broken internal invariant.
class InternalError : public Error {
 public:
  explicit InternalError(const std::string& what) : Error(ExitCode::kInternal, what) {}
};

}  // namespace optpolicy
