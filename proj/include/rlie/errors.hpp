#pragma once

#include <stdexcept>
#include <string>

namespace rlie {

// Root of every error the pipeline raises. `kind()` is a stable short tag
// used by the CLI when it prints structured errors on stderr.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define RLIE_DEFINE_ERROR(Name, tag)                              \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(what) {}       \
    const char* kind() const noexcept override { return tag; }    \
  }

RLIE_DEFINE_ERROR(UsageError, "usage");
RLIE_DEFINE_ERROR(LookupError, "lookup");
RLIE_DEFINE_ERROR(InvalidRuleError, "invalid-rule");
RLIE_DEFINE_ERROR(IntegrityError, "integrity");
RLIE_DEFINE_ERROR(CannotSplitError, "cannot-split");
RLIE_DEFINE_ERROR(TemplateError, "template");
RLIE_DEFINE_ERROR(GenerationError, "generation");
RLIE_DEFINE_ERROR(BackendError, "backend");
RLIE_DEFINE_ERROR(SolverError, "solver");
RLIE_DEFINE_ERROR(SelectionError, "selection");
RLIE_DEFINE_ERROR(ConfigError, "config");

#undef RLIE_DEFINE_ERROR

// Raised when a backend reply cannot be mapped onto a label token. Carries
// the raw response so callers can log or persist it.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string raw)
      : Error(what), raw_(std::move(raw)) {}
  const char* kind() const noexcept override { return "parse"; }
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

// Parse failure during E2-E4 inference.
class StrategyError : public ParseError {
 public:
  using ParseError::ParseError;
  const char* kind() const noexcept override { return "strategy"; }
};

// Line-numbered parse failure while reading a file.
class FileParseError : public Error {
 public:
  FileParseError(const std::string& what, std::size_t line)
      : Error(what), line_(line) {}
  const char* kind() const noexcept override { return "parse"; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace rlie
