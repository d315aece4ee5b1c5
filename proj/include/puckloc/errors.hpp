#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace puckloc {

// User-facing failures. The CLI maps these to exit code 1; anything else is
// treated as an internal error (exit code 2).
class UserError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgumentError : public UserError {
public:
    using UserError::UserError;
};

/// A value lies outside the domain of an operation (e.g. a point off the rink).
class DomainError : public UserError {
public:
    using UserError::UserError;
};

class IoError : public UserError {
public:
    using UserError::UserError;
};

/// Malformed input file. Carries the 1-based row and the offending field.
class ParseError : public UserError {
public:
    ParseError(std::size_t row, std::string field, const std::string& what)
        : UserError("row " + std::to_string(row) + ", field '" + field + "': " + what),
          row_(row),
          field_(std::move(field)) {}

    std::size_t row() const noexcept { return row_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::size_t row_;
    std::string field_;
};

class ShapeError : public UserError {
public:
    using UserError::UserError;
};

class InsufficientFramesError : public UserError {
public:
    using UserError::UserError;
};

class ConfigError : public UserError {
public:
    using UserError::UserError;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t epoch, std::size_t batch_index, const std::string& what)
        : std::runtime_error(what), epoch_(epoch), batch_index_(batch_index) {}

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch_index() const noexcept { return batch_index_; }

private:
    std::size_t epoch_;
    std::size_t batch_index_;
};

}  // namespace puckloc
