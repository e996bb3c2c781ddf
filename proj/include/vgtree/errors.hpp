#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace vgtree {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's documented precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Dataset records that failed validation. `problems` holds one
/// "line N: ..." entry per rejected record.
class SchemaError : public Error {
public:
    explicit SchemaError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    std::vector<std::string> problems_;
};

class DuplicateIdError : public Error {
public:
    using Error::Error;
};

class StructuralError : public Error {
public:
    using Error::Error;
};

class EmptyForest : public Error {
public:
    EmptyForest() : Error("forest has no roots") {}
};

class GroundingError : public Error {
public:
    using Error::Error;
};

// Provider failures. Everything a model call can raise derives from
// ProviderError so the engine can degrade on one type.
class ProviderError : public Error {
public:
    using Error::Error;
};

class TransportError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

class RateLimited : public ProviderError {
public:
    using ProviderError::ProviderError;
};

class MalformedResponse : public ProviderError {
public:
    using ProviderError::ProviderError;
};

/// The model answered, but the answer could not be parsed into the shape
/// the caller needs even after retries.
class MalformedCompletion : public ProviderError {
public:
    using ProviderError::ProviderError;
};

class MissingLogprobs : public ProviderError {
public:
    using ProviderError::ProviderError;
};

class FailedRewrite : public Error {
public:
    FailedRewrite(std::string task_id, std::vector<std::vector<std::string>> history);
    const std::vector<std::vector<std::string>>& history() const noexcept { return history_; }

private:
    std::vector<std::vector<std::string>> history_;
};

class MismatchedDatasets : public Error {
public:
    using Error::Error;
};

class Ungeneratable : public Error {
public:
    using Error::Error;
};

} // namespace vgtree
