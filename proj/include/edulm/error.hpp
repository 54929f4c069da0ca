#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace edulm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or dimensions disagree.
class ShapeError : public Error {
   public:
    using Error::Error;
};

/// A computation produced (or was fed) NaN/Inf, or is numerically undefined.
class NumericError : public Error {
   public:
    using Error::Error;
};

/// Bad user-provided data: missing files, out-of-range ids, malformed records.
class InputError : public Error {
   public:
    using Error::Error;
};

/// A record violated a domain invariant (e.g. a Likert score outside [1,7]).
class ValidationError : public InputError {
   public:
    using InputError::InputError;
};

/// Inconsistent or invalid configuration / hyperparameters.
class ConfigError : public Error {
   public:
    using Error::Error;
};

/// API misuse (wrong call order, mismatched styles, non-scalar backward).
class UsageError : public Error {
   public:
    using Error::Error;
};

/// Binary file could not be decoded; carries the byte offset of the failure.
class FormatError : public InputError {
   public:
    FormatError(const std::string &what, std::size_t offset)
        : InputError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

   private:
    std::size_t offset_;
};

/// Decoded content is structurally valid but inconsistent (e.g. tensor table vs config).
class IntegrityError : public InputError {
   public:
    using InputError::InputError;
};

}  // namespace edulm
