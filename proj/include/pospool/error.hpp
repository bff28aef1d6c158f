#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pospool {

enum class ErrorKind {
    Shape,
    InvalidArgument,
    Graph,
    Parse,
    Checkpoint,
    Config,
    Io,
};

const char* to_string(ErrorKind kind);

// Base of every error thrown by the library. what() is a single line so the
// CLI can print it verbatim.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Raised when an operand has the wrong rank or extent. `dim` is the index of
// the offending dimension (-1 for rank mismatches).
class ShapeError : public Error {
public:
    ShapeError(std::string op, std::string operand, int dim, std::int64_t expected,
               std::int64_t actual);

    const std::string& op() const noexcept { return op_; }
    const std::string& operand() const noexcept { return operand_; }
    int dim() const noexcept { return dim_; }
    std::int64_t expected() const noexcept { return expected_; }
    std::int64_t actual() const noexcept { return actual_; }

private:
    std::string op_;
    std::string operand_;
    int dim_;
    std::int64_t expected_;
    std::int64_t actual_;
};

// Malformed input file. `record` is the zero-based record index when the
// failure is attributable to a single record, otherwise SIZE_MAX.
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t record = SIZE_MAX);
    std::size_t record() const noexcept { return record_; }

private:
    std::size_t record_;
};

}  // namespace pospool
