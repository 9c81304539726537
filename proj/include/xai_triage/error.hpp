#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace xai_triage {

enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  parse,
  validation,
  degenerate_denominator,
  divergence,
  out_of_bounds,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::degenerate_denominator: return "degenerate_denominator";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::out_of_bounds: return "out_of_bounds";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

// Base of every exception thrown by the library. The kind is stable and is
// what the CLI reports in its machine-readable error output.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  ShapeError(std::size_t layer_index, const std::string& message)
      : Error(ErrorKind::shape_mismatch,
              "layer " + std::to_string(layer_index) + ": " + message),
        layer_index_(layer_index) {}

  std::size_t layer_index() const noexcept { return layer_index_; }

 private:
  std::size_t layer_index_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t byte_offset, const std::string& message)
      : Error(ErrorKind::parse,
              "byte " + std::to_string(byte_offset) + ": " + message),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

class DegenerateDenominatorError : public Error {
 public:
  explicit DegenerateDenominatorError(std::size_t layer_index)
      : Error(ErrorKind::degenerate_denominator,
              "layer " + std::to_string(layer_index) +
                  ": vanishing relevance denominator with zero stabilizer"),
        layer_index_(layer_index) {}

  std::size_t layer_index() const noexcept { return layer_index_; }

 private:
  std::size_t layer_index_;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::size_t iteration)
      : Error(ErrorKind::divergence,
              "non-finite loss at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

}  // namespace xai_triage
