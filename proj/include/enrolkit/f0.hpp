#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace enrolkit {

struct F0Frame {
  double time_s = 0.0;
  double f0_hz = 0.0;  // meaningful only when voiced
  bool voiced = false;
};

using F0Contour = std::vector<F0Frame>;

// CSV with header `time_s,f0_hz,voiced`, voiced in {0,1}.
F0Contour parse_f0_contour(std::string_view text);
F0Contour read_f0_contour(const std::filesystem::path& path);
std::string format_f0_contour(const F0Contour& contour);

}  // namespace enrolkit
