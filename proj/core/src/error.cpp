#include "flop/error.hpp"

namespace flop {

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kDimension: return "dimension";
    case ErrorCategory::kLabel: return "label";
    case ErrorCategory::kState: return "state";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kProtocol: return "protocol";
    case ErrorCategory::kFormat: return "format";
    case ErrorCategory::kAlignment: return "alignment";
  }
  return "unknown";
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig: return 2;
    case ErrorCategory::kProtocol: return 3;
    case ErrorCategory::kFormat: return 4;
    case ErrorCategory::kDimension: return 5;
    case ErrorCategory::kLabel: return 6;
    case ErrorCategory::kState: return 7;
    case ErrorCategory::kAlignment: return 8;
  }
  return 1;
}

}  // namespace flop
