#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ypbp {

// Argument outside the mathematical domain of a function (negative time, bad basis index).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Violated precondition of an operation (dimension mismatch, no events, bad level).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Value would overflow the floating-point range.
class NumericRangeError : public std::range_error {
 public:
  using std::range_error::range_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string file, std::size_t line, std::string column, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) +
                           (column.empty() ? std::string() : " [" + column + "]") + ": " + what),
        file_(std::move(file)),
        line_(line),
        column_(std::move(column)) {}

  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }
  const std::string& column() const { return column_; }

 private:
  std::string file_;
  std::size_t line_;
  std::string column_;
};

}  // namespace ypbp
