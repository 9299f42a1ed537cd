#pragma once

#include <stdexcept>
#include <string>

namespace aemlab {

// Root of every error the library throws. Subclasses map onto the failure
// categories callers are expected to distinguish (the CLI maps them to exit
// codes).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Prefix at or beyond max_len.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Exhaustive enumeration would exceed its path budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value, unknown environment kind, bad task id.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Call sequence violated a contract (stepping a finished episode, missing
// span coefficient, non-tangent vector, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A statistic is undefined for the supplied data.
class StatisticsError : public Error {
 public:
  using Error::Error;
};

}  // namespace aemlab
