#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace enrolkit::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by header name; throws not_found.
  std::size_t column(std::string_view name) const;
};

// RFC 4180-style: comma separated, optional double-quote quoting.
Table parse(std::string_view text);
Table read(const std::filesystem::path& path);

std::string escape(std::string_view field);
std::string format_row(const std::vector<std::string>& fields);
std::string format(const Table& table);
void write(const Table& table, const std::filesystem::path& path);

// Six significant digits, the precision used by every CSV the toolkit emits.
std::string number(double value);

double parse_double(std::string_view text);

}  // namespace enrolkit::csv
