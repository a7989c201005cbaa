#pragma once

#include <stdexcept>
#include <string>

namespace haemsa {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or vector dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An operation was invoked in the wrong state (missing tape, unevaluated member, ...).
class StateError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data. Messages name the file and row where possible.
class FormatError : public Error {
public:
    using Error::Error;
};

class LabelError : public Error {
public:
    using Error::Error;
};

class ValueError : public Error {
public:
    using Error::Error;
};

}  // namespace haemsa
