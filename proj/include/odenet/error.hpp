#pragma once

#include <stdexcept>
#include <string>

namespace odenet {

// Every library failure derives from Error so callers (the CLI in particular)
// can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape/width mismatches, bad composer combinations, invalid config values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar backward root, empty loss, etc.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, eigen-solver failure, degenerate metrics.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
};

class IntegrationError : public NumericError {
 public:
  IntegrationError(const std::string& what, double t) : NumericError(what), time(t) {}
  double time;
};

class RolloutError : public NumericError {
 public:
  RolloutError(const std::string& what, long step) : NumericError(what), step(step) {}
  long step;
};

class PeriodDetectionError : public NumericError {
 public:
  using NumericError::NumericError;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line) : Error(what), line(line) {}
  long line;
};

}  // namespace odenet
