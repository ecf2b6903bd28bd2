#pragma once

#include <stdexcept>
#include <string>

namespace dtvec {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
  public:
   using std::runtime_error::runtime_error;
};

/// Malformed input file. `line()` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
  public:
   ParseError(const std::string& what, std::size_t line = 0) : Error(what), line_(line) {}
   std::size_t line() const noexcept { return line_; }

  private:
   std::size_t line_;
};

class ConfigError : public Error {
  public:
   using Error::Error;
};

/// A queue whose workload reaches or exceeds one has no steady state.
class UnstableQueueError : public Error {
  public:
   using Error::Error;
};

/// No finite transmission power meets the reliability target.
class InfeasibleError : public Error {
  public:
   using Error::Error;
};

class DimensionError : public Error {
  public:
   using Error::Error;
};

class NoTwinsError : public Error {
  public:
   using Error::Error;
};

class ZeroDenominatorError : public Error {
  public:
   using Error::Error;
};

}  // namespace dtvec
