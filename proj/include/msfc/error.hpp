// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace msfc {

/// Base of every error the library throws. `kind()` is a short stable tag
/// used by the CLI for machine-parseable error lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MSFC_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  };

MSFC_DEFINE_ERROR(ConfigError, "config")
MSFC_DEFINE_ERROR(InputError, "input")
MSFC_DEFINE_ERROR(ParseError, "parse")
MSFC_DEFINE_ERROR(ProtocolError, "protocol")
MSFC_DEFINE_ERROR(FreezeViolation, "freeze")
MSFC_DEFINE_ERROR(NumericError, "numeric")
MSFC_DEFINE_ERROR(DegenerateInputError, "degenerate")
MSFC_DEFINE_ERROR(LoadError, "load")
MSFC_DEFINE_ERROR(FormatError, "format")
MSFC_DEFINE_ERROR(ProvenanceError, "provenance")
MSFC_DEFINE_ERROR(MetricError, "metric")
MSFC_DEFINE_ERROR(InternalError, "internal")

#undef MSFC_DEFINE_ERROR

}  // namespace msfc
