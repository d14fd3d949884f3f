#pragma once

#include <stdexcept>
#include <string>

namespace skyladder {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (bad schedule kind, odd head dim, ...).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Caller supplied an argument outside the operation's domain.
class InputError : public Error {
  public:
    using Error::Error;
};

/// Corpus or dataset content violates a data invariant.
class DataValidationError : public Error {
  public:
    using Error::Error;
};

/// Operation not defined for the given schedule kind.
class UnsupportedKindError : public Error {
  public:
    using Error::Error;
};

/// API misuse detected at runtime, e.g. a stale forward trace.
class ContractError : public Error {
  public:
    using Error::Error;
};

/// A non-finite value appeared in the forward pass or the loss.
class NumericalError : public Error {
  public:
    NumericalError(const std::string& what, int layer)
        : Error(what), layer_(layer) {}

    /// Layer index where the failure was detected, -1 for the loss/head.
    int layer() const noexcept { return layer_; }

  private:
    int layer_;
};

}  // namespace skyladder
