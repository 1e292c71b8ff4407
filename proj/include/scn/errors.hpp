#pragma once

#include <stdexcept>
#include <string>

namespace scn {

/// Precondition violations on arguments (sizes, ranges, counts).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base for every runtime failure raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

class EmptyForeground : public Error {
 public:
  using Error::Error;
};

class InsufficientSubjects : public Error {
 public:
  using Error::Error;
};

class InternalConsistency : public Error {
 public:
  using Error::Error;
};

class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

class FreezeViolation : public Error {
 public:
  using Error::Error;
};

class ConfigurationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace scn
