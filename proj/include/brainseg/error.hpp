#pragma once

#include <stdexcept>
#include <string>

namespace brainseg {

/// Process exit codes used by the command-line front end.
enum class ExitCode : int {
  ok = 0,
  usage = 1,
  config = 2,
  data = 3,
  divergence = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

// Configuration problems: bad ranges, inconsistent network configs, bad flags.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

class ValidationError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ConstructionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Problems with the data being processed.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

class IngestionError : public DataError {
 public:
  using DataError::DataError;
};

class EmptyBrainError : public DataError {
 public:
  using DataError::DataError;
};

class ConsistencyError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class DegenerateInputError : public DataError {
 public:
  using DataError::DataError;
};

class NormalizationError : public DataError {
 public:
  using DataError::DataError;
};

class MissingArtifactError : public DataError {
 public:
  using DataError::DataError;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::divergence; }
};

}  // namespace brainseg
