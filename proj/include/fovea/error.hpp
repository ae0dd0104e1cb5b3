#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fovea {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI when it reports failures as JSON.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class ValidationError : public Error {
public:
  explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

class GraphError : public Error {
public:
  explicit GraphError(const std::string& what) : Error("graph", what) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class CheckpointError : public Error {
public:
  explicit CheckpointError(const std::string& what) : Error("checkpoint", what) {}
};

class UnsupportedFormatError : public Error {
public:
  explicit UnsupportedFormatError(const std::string& what) : Error("unsupported_format", what) {}
};

/// Malformed binary input; `offset()` is the byte position where reading failed.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t offset)
      : Error("parse", what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

}  // namespace fovea
