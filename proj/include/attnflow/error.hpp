#pragma once

#include <stdexcept>
#include <string>

namespace attnflow {

/// Failure categories; the CLI maps each one onto a process exit code.
enum class ErrorKind {
  config,     // schema, shape or usage problems
  input,      // rejected input values or undecodable images
  numerical,  // non-finite values during a forward/backward pass
  io,         // filesystem and network
  metric,     // degenerate metric inputs
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorKind::numerical, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class MetricError : public Error {
 public:
  explicit MetricError(const std::string& what) : Error(ErrorKind::metric, what) {}
};

/// Process exit code for an error kind: 2 configuration/usage, 3 numerical, 4 I/O.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace attnflow
