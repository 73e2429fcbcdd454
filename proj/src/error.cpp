#include "condcap/error.hpp"

namespace condcap {

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::configuration: return "configuration";
    case ErrorCategory::geometry: return "geometry";
    case ErrorCategory::nonconvergence: return "nonconvergence";
    case ErrorCategory::io: return "io";
    case ErrorCategory::contract: return "contract";
    case ErrorCategory::numerical: return "numerical";
    case ErrorCategory::degenerate: return "degenerate";
  }
  return "unknown";
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::configuration: return 2;
    case ErrorCategory::geometry: return 3;
    case ErrorCategory::nonconvergence: return 4;
    case ErrorCategory::io: return 5;
    case ErrorCategory::contract: return 6;
    case ErrorCategory::numerical: return 7;
    case ErrorCategory::degenerate: return 8;
  }
  return 1;
}

}  // namespace condcap
