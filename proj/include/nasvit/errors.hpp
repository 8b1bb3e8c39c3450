#pragma once

#include <stdexcept>
#include <string>

namespace nasvit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit an operation.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// Out-of-range class ids, tensor indices and similar.
class IndexError : public Error {
  public:
    using Error::Error;
};

/// An API used outside of its contract (e.g. backward on a non-scalar).
class ContractError : public Error {
  public:
    using Error::Error;
};

/// Malformed image or kernel input (empty image, wrong channel count, ...).
class InputError : public Error {
  public:
    using Error::Error;
};

/// Invalid configuration values or config file syntax.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// File-system and codec failures.
class IoError : public Error {
  public:
    using Error::Error;
};

/// Corrupt or truncated checkpoint files.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// Non-finite values during training.
class NumericError : public Error {
  public:
    using Error::Error;
};

}  // namespace nasvit
