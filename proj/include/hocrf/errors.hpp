#pragma once

#include <stdexcept>
#include <string>

namespace hocrf {

// Violated precondition of an energy or environment operation.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Structurally valid input with out-of-range or inconsistent values.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor / instance dimensions disagree.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed interchange file. Carries the 1-based line and the field that failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", field '" + field +
                           "': " + what),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

// Training diverged or was given nothing to train on.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hocrf
