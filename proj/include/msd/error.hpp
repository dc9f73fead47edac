#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace msd {

/// Base of every error thrown by the library. `category()` is the short tag
/// the CLI prints in its diagnostics and maps to an exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("invalid-shape", what) {}
};

/// Violated precondition or use of a stale graph handle.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error("numeric-divergence", what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class CapacityError : public Error {
 public:
  explicit CapacityError(const std::string& what) : Error("capacity", what) {}
};

class ModalityError : public Error {
 public:
  explicit ModalityError(const std::string& what) : Error("modality", what) {}
};

/// Malformed input file; `offset()` is the byte position of the problem.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error("parse", what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class CorruptCheckpointError : public Error {
 public:
  CorruptCheckpointError(const std::string& what, std::size_t offset)
      : Error("corrupt-checkpoint", what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace msd
