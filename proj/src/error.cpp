#include "evcp/error.hpp"

namespace evcp {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::config: return "config";
    case ErrorKind::shape: return "shape";
    case ErrorKind::structure: return "structure";
    case ErrorKind::reference: return "reference";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::domain: return "domain";
    case ErrorKind::empty_batch: return "empty_batch";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
    case ErrorKind::load: return "load";
  }
  return "unknown";
}

}  // namespace evcp
