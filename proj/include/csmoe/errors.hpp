// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace csmoe {

// Base of every error raised by the library. The CLI maps NumericalError to
// exit code 3 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FeasibilityError : public Error {
 public:
  FeasibilityError(const std::string& what, int frames, int required)
      : Error(what), frames_(frames), required_(required) {}
  int frames() const { return frames_; }
  int required() const { return required_; }

 private:
  int frames_;
  int required_;
};

class TagError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line) : Error(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace csmoe
