#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace slimnet {

// Error taxonomy. Category drives the CLI exit code; the message carries the
// offending shapes / values / file positions.
enum class ErrorCategory {
  Argument,      // bad value passed to an operation
  Dimension,     // tensor shape mismatch
  State,         // operation invalid for the object's current state
  Parse,         // malformed input text (carries a line number)
  Schema,        // structurally valid input with wrong fields/columns
  Config,        // invalid configuration value
  Format,        // unrecognized binary format or version
  Corruption,    // truncated or internally inconsistent binary payload
  Io,            // filesystem failure
  Convergence,   // iterative solver failed to converge
  Verification,  // a checked mathematical property does not hold
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string message)
      : std::runtime_error(std::move(message)), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ArgumentError : Error {
  explicit ArgumentError(std::string m) : Error(ErrorCategory::Argument, std::move(m)) {}
};

struct DimensionError : Error {
  explicit DimensionError(std::string m) : Error(ErrorCategory::Dimension, std::move(m)) {}
};

struct StateError : Error {
  explicit StateError(std::string m) : Error(ErrorCategory::State, std::move(m)) {}
};

struct ParseError : Error {
  ParseError(std::size_t line, const std::string& m)
      : Error(ErrorCategory::Parse, "line " + std::to_string(line) + ": " + m), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct SchemaError : Error {
  explicit SchemaError(std::string m) : Error(ErrorCategory::Schema, std::move(m)) {}
};

struct ConfigError : Error {
  explicit ConfigError(std::string m) : Error(ErrorCategory::Config, std::move(m)) {}
};

struct FormatError : Error {
  explicit FormatError(std::string m) : Error(ErrorCategory::Format, std::move(m)) {}
};

struct CorruptionError : Error {
  explicit CorruptionError(std::string m) : Error(ErrorCategory::Corruption, std::move(m)) {}
};

struct IoError : Error {
  explicit IoError(std::string m) : Error(ErrorCategory::Io, std::move(m)) {}
};

struct ConvergenceError : Error {
  explicit ConvergenceError(std::string m) : Error(ErrorCategory::Convergence, std::move(m)) {}
};

struct VerificationError : Error {
  explicit VerificationError(std::string m) : Error(ErrorCategory::Verification, std::move(m)) {}
};

}  // namespace slimnet
