#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace onedse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A value that parsed but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied argument outside the documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

}  // namespace onedse
