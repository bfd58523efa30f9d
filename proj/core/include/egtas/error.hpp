#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace egtas {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A spec field names an operation that is not in the operation table.
class UnknownOptionError : public Error {
 public:
  UnknownOptionError(std::string field, std::string value)
      : Error("unknown option '" + value + "' for field '" + field + "'"),
        field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A gene value lies outside its bound.
class OutOfBoundsError : public Error {
 public:
  OutOfBoundsError(std::size_t position, int value, int bound)
      : Error("gene " + std::to_string(position) + " = " + std::to_string(value) +
              " out of bounds [0, " + std::to_string(bound) + ")"),
        position_(position),
        bound_(bound) {}
  std::size_t position() const noexcept { return position_; }
  int bound() const noexcept { return bound_; }

 private:
  std::size_t position_;
  int bound_;
};

/// Malformed input document; `path()` names the offending field.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error("schema error at '" + path + "': " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Invalid argument to a numerical routine (k too large, empty mask, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A forward pass or loss produced a non-finite value.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace egtas
