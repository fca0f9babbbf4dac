#pragma once

#include <stdexcept>
#include <string>

namespace cropsim {

// Base for every error raised by the toolkit. The CLI maps ValidationError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, malformed input files, violated preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced NaN/Inf.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace cropsim
