#pragma once

#include <stdexcept>
#include <string>

namespace afn {

// Base for every error raised by the library. Callers that only care about
// "something in the engine failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated (e.g. asking a terminal state
// for its children, routing an agent state to an environment-state loss).
class ContractError : public Error {
 public:
  using Error::Error;
};

// An input could not be accepted (bad spec, nonpositive reward, unknown key).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// An enumeration or exact solve would exceed its configured size guard.
class SizeGuardError : public Error {
 public:
  using Error::Error;
};

// A numeric failure during optimization (NaN/Inf gradient or loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace afn
