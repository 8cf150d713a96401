#pragma once

#include <stdexcept>
#include <string>

namespace perfbnn {

/// Bad command-line usage or configuration (exit code 2).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DataErrorKind {
    missing_file,
    empty_file,
    missing_column,
    bad_cell,
    schema_mismatch,
    degenerate_range,
    too_small,
    invalid_argument,
};

/// Problems with input data: unreadable files, malformed cells, degenerate datasets (exit code 3).
class DataError : public std::runtime_error {
public:
    DataError(DataErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    DataErrorKind kind() const noexcept { return kind_; }

private:
    DataErrorKind kind_;
};

/// Non-finite losses, singular kernels and other numerical failures (exit code 4).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace perfbnn
