#pragma once

#include <stdexcept>
#include <string>

namespace cstonet {

// Base for every error raised by the library. The CLI maps each subclass to a
// distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or indices that do not agree with the network configuration.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or model constant (nonpositive variance, lambda
// outside (0,1), ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// NaN or infinity produced during evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset or user input.
class InputError : public Error {
 public:
  using Error::Error;
};

// Configuration file problems (unknown key, missing key, bad value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File system and parse failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cstonet
