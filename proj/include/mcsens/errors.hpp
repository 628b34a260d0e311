#pragma once

#include <stdexcept>
#include <string>

namespace mcsens {

// Error categories map one-to-one onto the CLI exit codes.
enum class ErrorKind {
  dimension,   // conformability violations
  schema,      // malformed experiment configuration
  model,       // model violates an assumption (negative density, bad support)
  refusal,     // a verifiable precondition failed (e.g. no contraction found)
  numerical,   // singular or ill-conditioned solve
  truncation,  // a simulated path hit its hard step cap
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorKind::dimension, "dimension mismatch: " + what) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what)
      : Error(ErrorKind::schema, "config: " + what) {}
};

class ModelError : public Error {
 public:
  explicit ModelError(const std::string& what)
      : Error(ErrorKind::model, "model error: " + what) {}
};

class RefusalError : public Error {
 public:
  explicit RefusalError(const std::string& what)
      : Error(ErrorKind::refusal, "refused: " + what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorKind::numerical, "numerical failure: " + what) {}
};

class TruncationError : public Error {
 public:
  TruncationError(const std::string& what, std::size_t steps)
      : Error(ErrorKind::truncation, "truncated: " + what), steps_(steps) {}

  std::size_t steps() const noexcept { return steps_; }

 private:
  std::size_t steps_;
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::schema:
    case ErrorKind::dimension:
      return 2;
    case ErrorKind::model:
    case ErrorKind::refusal:
      return 3;
    case ErrorKind::numerical:
      return 4;
    case ErrorKind::truncation:
      return 5;
  }
  return 1;
}

namespace detail {

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + " (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

}  // namespace detail
}  // namespace mcsens
