#pragma once

#include <stdexcept>
#include <string>

namespace flowtune {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration: unknown preset, invalid spec, missing required input.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Value outside its mathematical domain (out-of-range encode, nonpositive log, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Request violates a tool/request schema (bad tool name, malformed proposal).
class SchemaError : public Error {
public:
    using Error::Error;
};

/// A hard limit was exceeded (tool count cap).
class LimitError : public Error {
public:
    using Error::Error;
};

/// Per-iteration budget exhausted (tool calls, retrieval calls or payload).
class BudgetError : public Error {
public:
    using Error::Error;
};

/// Retrieval provider unreachable or failed; cache untouched.
class RetrievalUnavailableError : public Error {
public:
    using Error::Error;
};

/// Structured output could not be parsed after all retries.
class StructuredParseError : public Error {
public:
    using Error::Error;
};

/// Kernel matrix could not be factorized even at maximum jitter.
class ConditioningError : public Error {
public:
    using Error::Error;
};

/// Too few rows for the requested analysis.
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

/// Replay diverged from the logged run (cache miss or proposal mismatch).
class ReplayDivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace flowtune
