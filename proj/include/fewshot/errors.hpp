#pragma once

#include <stdexcept>
#include <string>

namespace fewshot {

// Error categories double as CLI exit codes: 0 success, 1 config, 2 data,
// 3 numeric. Stable contract for scripting.
enum class ErrorCategory : int { config = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }
    int exit_code() const noexcept { return static_cast<int>(category_); }

private:
    ErrorCategory category_;
};

// Bad run configuration, invalid option combinations, contract misuse.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message)
        : Error(ErrorCategory::config, message) {}
};

// Tensor shape / dimension mismatches. Messages name both shapes.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message)
        : Error(ErrorCategory::config, message) {}
};

// Malformed input files, unsatisfiable sampling requests, bad records.
class DataError : public Error {
public:
    explicit DataError(const std::string& message)
        : Error(ErrorCategory::data, message) {}
};

// Runtime numeric failures: NaN losses, divergence.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& message)
        : Error(ErrorCategory::numeric, message) {}
};

// Zero-norm vectors where a direction is required. A zero sentence
// embedding indicates an upstream bug, so this is never silently mapped
// to a score of zero.
class DegenerateInputError : public NumericError {
public:
    explicit DegenerateInputError(const std::string& message)
        : NumericError(message) {}
};

}  // namespace fewshot
