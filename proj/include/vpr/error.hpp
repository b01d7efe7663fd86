#pragma once

#include <stdexcept>
#include <string>

namespace vpr {

/// Base of every error raised by the library. The CLI maps it to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class StorageError : public Error {
public:
    StorageError(const std::string& path, const std::string& what)
        : Error(path + ": " + what), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Binary container has the wrong magic, version or a truncated payload.
class FormatError : public Error {
public:
    using Error::Error;
};

/// JSON document does not match the expected schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Array dimensions disagree or a type invariant does not hold.
class ShapeError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class EvaluationError : public Error {
public:
    using Error::Error;
};

}  // namespace vpr
