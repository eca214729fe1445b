#pragma once

#include <stdexcept>
#include <string>

namespace qavlm {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input supplied by the caller: malformed files, violated preconditions,
// invalid configuration. The CLI maps these to exit code 2.
class InputError : public Error {
public:
    using Error::Error;
};

class ParseError : public InputError {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : InputError(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class EmptyDocumentError : public InputError {
public:
    using InputError::InputError;
};

class PreconditionError : public InputError {
public:
    using InputError::InputError;
};

class ConfigurationError : public InputError {
public:
    using InputError::InputError;
};

class NoDataError : public InputError {
public:
    using InputError::InputError;
};

class DataIntegrityError : public InputError {
public:
    using InputError::InputError;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class DegenerateVectorError : public Error {
public:
    using Error::Error;
};

class DegenerateOutputError : public Error {
public:
    using Error::Error;
};

class EmptyDatabaseError : public Error {
public:
    using Error::Error;
};

class ExtractionFormatError : public Error {
public:
    using Error::Error;
};

class NoFeaturesError : public Error {
public:
    using Error::Error;
};

}  // namespace qavlm
