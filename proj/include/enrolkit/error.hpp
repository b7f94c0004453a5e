#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace enrolkit {

enum class Errc {
  invalid_argument,
  not_found,
  conflict,
  parse_error,
  io_error,
  dimension_mismatch,
  missing_field,
  duplicate_id,
};

std::string_view to_string(Errc code);

// Single exception type for the toolkit; the code lets callers (CLI, HTTP
// layer) map failures without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& message);

}  // namespace enrolkit
