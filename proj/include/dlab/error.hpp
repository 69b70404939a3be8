#pragma once

#include <stdexcept>
#include <string>

namespace dlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or model/window dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value, unknown key, or inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data. Messages name the file and line.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, truncated, or incompatible checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace dlab
