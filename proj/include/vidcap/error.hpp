#pragma once

#include <stdexcept>
#include <string>

namespace vidcap {

// Error taxonomy mirrors the CLI exit codes: usage/dimension -> 1,
// data/format -> 2, numeric -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace vidcap
