#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace optrule {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. row() is the 1-based data row (header excluded), or 0
// when the problem is in the header.
class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : Error(what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A caller-side contract was not met.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A numerical routine failed to produce a usable answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace optrule
