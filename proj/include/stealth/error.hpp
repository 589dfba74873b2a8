#pragma once

#include <stdexcept>
#include <string>

namespace stealth {

// Error taxonomy shared by every module. The CLI maps kinds to exit codes.
enum class ErrorKind {
  shape,
  argument,
  state,
  numeric,
  schema,
  parse,
  label,
  config,
  dependency,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define STEALTH_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

STEALTH_DEFINE_ERROR(ShapeError, shape)
STEALTH_DEFINE_ERROR(ArgumentError, argument)
STEALTH_DEFINE_ERROR(StateError, state)
STEALTH_DEFINE_ERROR(NumericError, numeric)
STEALTH_DEFINE_ERROR(SchemaError, schema)
STEALTH_DEFINE_ERROR(ParseError, parse)
STEALTH_DEFINE_ERROR(LabelError, label)
STEALTH_DEFINE_ERROR(ConfigError, config)
STEALTH_DEFINE_ERROR(DependencyError, dependency)
STEALTH_DEFINE_ERROR(IoError, io)

#undef STEALTH_DEFINE_ERROR

}  // namespace stealth
