#pragma once

#include <stdexcept>
#include <string>

namespace poolerc {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed CSV rows, inconsistent datasets, invalid config.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Arguments outside the domain of a mathematical operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Knot placement collapsed (e.g. all values identical).
class DegenerateKnotsError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Inconsistent model or basis configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// The sampler could not find a finite starting point.
class InitializationError : public Error {
 public:
  using Error::Error;
};

}  // namespace poolerc
