#pragma once

#include <stdexcept>
#include <string>

namespace evcp {

enum class ErrorKind {
  parse,
  validation,
  alignment,
  insufficient_data,
  config,
  shape,
  structure,
  reference,
  degenerate,
  domain,
  empty_batch,
  numeric,
  io,
  load,
};

const char* to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace evcp
