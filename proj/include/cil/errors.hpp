#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cil {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NonFinite : public Error {
 public:
  using Error::Error;
};

// Thrown when a symmetric factorization breaks down even on the stable path.
class SolveFailure : public Error {
 public:
  SolveFailure(double rho, std::ptrdiff_t pivot_index)
      : Error("solve failure: non-positive pivot at index " + std::to_string(pivot_index) +
              " (rho=" + std::to_string(rho) + ")"),
        rho_(rho),
        pivot_index_(pivot_index) {}
  SolveFailure(const std::string& message, double rho, std::ptrdiff_t pivot_index)
      : Error(message), rho_(rho), pivot_index_(pivot_index) {}
  double rho() const { return rho_; }
  std::ptrdiff_t pivot_index() const { return pivot_index_; }

 private:
  double rho_;
  std::ptrdiff_t pivot_index_;
};

class EmptyTask : public Error {
 public:
  using Error::Error;
};

class UnknownTask : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class BadMagic : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedFile : public DataError {
 public:
  using DataError::DataError;
};

class CountMismatch : public DataError {
 public:
  using DataError::DataError;
};

class HeaderMismatch : public DataError {
 public:
  using DataError::DataError;
};

class BadLabel : public DataError {
 public:
  using DataError::DataError;
};

class IndivisibleSplit : public DataError {
 public:
  using DataError::DataError;
};

class MissingClass : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace cil
