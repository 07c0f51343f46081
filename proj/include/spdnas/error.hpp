#pragma once

#include <stdexcept>
#include <string>

namespace spdnas {

// Error hierarchy. Every failure surfaced by the library derives from Error so
// callers (the CLI in particular) can map categories to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated (empty inputs, bad weights,
// non-symmetric matrices, tape misuse).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Dimension or channel-count mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A matrix function was asked to act outside its domain (log of a
// non-positive eigenvalue and friends).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration: bad kernel size, odd block size, broken dimension chain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown during optimization (NaN loss, rank-deficient retraction).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Dataset loading or parsing failure.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace spdnas
