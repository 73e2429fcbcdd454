#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace condcap {

// Every category maps to a distinct process exit code (see exit_code()).
enum class ErrorCategory {
  configuration,   // bad parameters or config file
  geometry,        // condenser invalid, duplicate nodes, point outside domain
  nonconvergence,  // iterative method hit its cap without a certificate
  io,              // filesystem failures
  contract,        // caller violated a precondition (dimension mismatch, bad index, ...)
  numerical,       // breakdown: indefinite matrix, nonpositive energy, singular evaluation
  degenerate,      // zero capacity, constants not unique
};

std::string_view to_string(ErrorCategory category);
int exit_code(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define CONDCAP_DEFINE_ERROR(Name, cat)                                    \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& message) : Error(cat, message) {}    \
  };

CONDCAP_DEFINE_ERROR(ConfigError, ErrorCategory::configuration)
CONDCAP_DEFINE_ERROR(GeometryError, ErrorCategory::geometry)
CONDCAP_DEFINE_ERROR(NonconvergenceError, ErrorCategory::nonconvergence)
CONDCAP_DEFINE_ERROR(IoError, ErrorCategory::io)
CONDCAP_DEFINE_ERROR(ContractError, ErrorCategory::contract)
CONDCAP_DEFINE_ERROR(NumericalError, ErrorCategory::numerical)
CONDCAP_DEFINE_ERROR(DegenerateError, ErrorCategory::degenerate)

#undef CONDCAP_DEFINE_ERROR

}  // namespace condcap
