#include "enrolkit/error.hpp"

namespace enrolkit {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid argument";
    case Errc::not_found: return "not found";
    case Errc::conflict: return "conflict";
    case Errc::parse_error: return "parse error";
    case Errc::io_error: return "i/o error";
    case Errc::dimension_mismatch: return "dimension mismatch";
    case Errc::missing_field: return "missing field";
    case Errc::duplicate_id: return "duplicate id";
  }
  return "unknown";
}

void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace enrolkit
