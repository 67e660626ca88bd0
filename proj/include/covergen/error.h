// Error type shared by every covergen module.

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace covergen {

enum class ErrorCode {
  kInvalidArgument,
  kOutOfRange,
  kParse,
  kIo,
  kUnsupported,
  kShapeMismatch,
  kInfeasible,
  kState,
};

const char* error_code_name(ErrorCode code);

/// Exception carrying a machine-readable code and, for parse errors, the
/// offset (byte or token index) where parsing failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> offset = std::nullopt)
      : std::runtime_error(message), code_(code), offset_(offset) {}

  ErrorCode code() const { return code_; }
  const std::optional<std::size_t>& offset() const { return offset_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> offset_;
};

}  // namespace covergen
