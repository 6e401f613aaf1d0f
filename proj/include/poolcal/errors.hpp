#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace poolcal {

// Base of every error the library throws. The CLI maps subclasses onto exit
// codes: input/contract problems exit 2, numerical failures exit 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. Carries the 1-based line number of the offending row.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Dataset or argument violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation's precondition (e.g. fewer than two pseudo datasets).
class ContractError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Variance components or fixed effects cannot be separated by the design.
class IdentifiabilityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Logistic likelihood has no finite maximizer.
class SeparationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace poolcal
