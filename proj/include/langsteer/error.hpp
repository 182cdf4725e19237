#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace langsteer {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { config, data, compute };

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

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class ComputeError : public Error {
 public:
  explicit ComputeError(const std::string& what) : Error(ErrorKind::compute, what) {}
};

/// Input longer than the model context.
class LengthError : public DataError {
 public:
  using DataError::DataError;
};

/// Malformed binary container (weight files).
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Malformed text record; carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// NeuronId outside the model's (n_layers, d_ff) grid.
class AddressingError : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

/// Caller violated an operation's precondition.
class ContractError : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return 2;
    case ErrorKind::data:
      return 3;
    case ErrorKind::compute:
      return 4;
  }
  return 4;
}

}  // namespace langsteer
