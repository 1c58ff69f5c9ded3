#pragma once

#include <stdexcept>
#include <string>

namespace msmbd {

// Every failure raised by the library derives from Error so callers can
// catch one type; the subclasses let the CLI map failures to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// Non-finite values produced or consumed by a numeric operation.
class NumericError : public Error {
public:
    using Error::Error;
};

// A softmax row (or a tweet sequence) with no unmasked position.
class DegenerateMaskError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

} // namespace msmbd
