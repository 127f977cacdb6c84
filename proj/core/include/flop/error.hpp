#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flop {

/// Broad failure classes. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
  kDimension,
  kLabel,
  kState,
  kConfig,
  kProtocol,
  kFormat,
  kAlignment,
};

std::string_view to_string(ErrorCategory category);

/// Process exit code for a category (0 is reserved for success, 1 for
/// anything that is not a flop::Error).
int exit_code(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorCategory::kDimension, what) {}
};

class LabelError : public Error {
 public:
  explicit LabelError(const std::string& what)
      : Error(ErrorCategory::kLabel, what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what)
      : Error(ErrorCategory::kState, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::kConfig, what) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what)
      : Error(ErrorCategory::kProtocol, what) {}
};

/// Malformed input file. `offset` is the byte position at which parsing
/// failed (in the decompressed stream for gzip input).
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(ErrorCategory::kFormat,
              what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class AlignmentError : public Error {
 public:
  explicit AlignmentError(const std::string& what)
      : Error(ErrorCategory::kAlignment, what) {}
};

}  // namespace flop
