#pragma once

#include <stdexcept>
#include <string>

namespace uniflow {

// Base of every error thrown by the library. The CLI maps the subclasses onto
// its exit codes (1 usage, 2 I/O, 3 config, 4 numerical).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace uniflow
