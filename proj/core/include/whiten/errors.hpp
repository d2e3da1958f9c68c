#pragma once

#include <stdexcept>
#include <string>

namespace whiten {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid layer spec or configuration (caught at construction/parse time).
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Bad input data: shape mismatches, malformed files, degenerate batches.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: factorizations, non-finite values, diverged training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Phase misuse: backward on an eval cache, eval without running statistics.
class PhaseError : public Error {
 public:
  using Error::Error;
};

}  // namespace whiten
