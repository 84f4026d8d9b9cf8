#pragma once

#include <stdexcept>
#include <string>

namespace wep {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (bad key, invariant violation, empty vocabulary).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// An argument outside the domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Normal equations are singular or numerically rank deficient.
class RankDeficiencyError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// A caller broke an operation's precondition (stale cache, empty context, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// An evaluation could not be scored (too little coverage, degenerate input).
class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace wep
