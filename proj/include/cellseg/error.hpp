#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cellseg {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can map the category to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "usage"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

// Malformed binary or text input. offset() is the byte position where parsing
// stopped (or the line number for line-oriented formats).
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  const char* kind() const noexcept override { return "format"; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Raised when a loss term turns non-finite during training.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::string term) : Error(what), term_(std::move(term)) {}
  const char* kind() const noexcept override { return "training"; }
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace cellseg
