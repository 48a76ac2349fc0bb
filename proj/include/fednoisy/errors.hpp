#pragma once

#include <stdexcept>
#include <string>

namespace fednoisy {

/// Base class for every error raised by the simulator.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor/parameter shapes do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An argument lies outside the operation's domain (bad label, bad rate, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN or infinity.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A file is not in the expected binary format.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Two inputs that must agree (image/label counts, manifests) do not.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

/// Invalid or unsatisfiable configuration. `key()` names the offending field.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& message)
        : Error(key + ": " + message), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// An operation was called before the state it needs exists.
class StateError : public Error {
public:
    using Error::Error;
};

/// Input has no variance (CKA on constant features).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure; the message carries the path.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace fednoisy
