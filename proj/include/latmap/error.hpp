#pragma once

#include <stdexcept>
#include <string>

namespace latmap {

enum class ErrorKind {
  kInvalidArgument,  // caller violated a precondition
  kOutOfBounds,      // point outside the grid bounds
  kInvalidFrame,     // frame failed validation (pose, shapes)
  kFormat,           // malformed or corrupt file
  kIo,               // filesystem failure
  kEmptyMap,         // no occupied vertices where some are required
  kState,            // operation called in the wrong state
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` lets callers (the CLI in
/// particular) map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace latmap
