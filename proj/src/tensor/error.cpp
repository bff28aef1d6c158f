#include "pospool/error.hpp"

namespace pospool {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Shape: return "shape";
        case ErrorKind::InvalidArgument: return "invalid_argument";
        case ErrorKind::Graph: return "graph";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Checkpoint: return "checkpoint";
        case ErrorKind::Config: return "config";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

ShapeError::ShapeError(std::string op, std::string operand, int dim, std::int64_t expected,
                       std::int64_t actual)
    : Error(ErrorKind::Shape,
            op + ": " + operand + (dim < 0 ? " rank" : " dim " + std::to_string(dim)) +
                " expected " + std::to_string(expected) + " got " + std::to_string(actual)),
      op_(std::move(op)),
      operand_(std::move(operand)),
      dim_(dim),
      expected_(expected),
      actual_(actual) {}

ParseError::ParseError(const std::string& message, std::size_t record)
    : Error(ErrorKind::Parse,
            record == SIZE_MAX ? message : "record " + std::to_string(record) + ": " + message),
      record_(record) {}

}  // namespace pospool
