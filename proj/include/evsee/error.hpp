#pragma once

#include <stdexcept>
#include <string>

namespace evsee {

// Every failure raised by the library derives from Error. The subclass
// determines the CLI exit code (domain 2, I/O 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated: bad argument, shape mismatch, value out of range.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a degenerate numeric configuration.
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DomainError(what);
}

}  // namespace detail
}  // namespace evsee
