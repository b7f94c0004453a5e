#include "enrolkit/f0.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "enrolkit/csv.hpp"
#include "enrolkit/error.hpp"

namespace enrolkit {

F0Contour parse_f0_contour(std::string_view text) {
  const auto table = csv::parse(text);
  const std::vector<std::string> expected = {"time_s", "f0_hz", "voiced"};
  if (table.header != expected) {
    fail(Errc::parse_error, "f0 contour: header must be time_s,f0_hz,voiced");
  }
  F0Contour contour;
  contour.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    F0Frame frame;
    frame.time_s = csv::parse_double(row[0]);
    frame.f0_hz = csv::parse_double(row[1]);
    if (row[2] == "1") {
      frame.voiced = true;
    } else if (row[2] != "0") {
      fail(Errc::parse_error, "f0 contour row " + std::to_string(i + 2) + ": voiced must be 0 or 1");
    }
    contour.push_back(frame);
  }
  return contour;
}

F0Contour read_f0_contour(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open f0 contour " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_f0_contour(buffer.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string format_f0_contour(const F0Contour& contour) {
  std::string out = "time_s,f0_hz,voiced\n";
  char buf[96];
  for (const auto& f : contour) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%d\n", f.time_s, f.f0_hz, f.voiced ? 1 : 0);
    out += buf;
  }
  return out;
}

}  // namespace enrolkit
