#pragma once

#include <istream>
#include <string>
#include <vector>

namespace cgiqa::csv {

// Splits one RFC 4180 line. Quoted fields may contain commas and doubled
// quotes but not line breaks.
std::vector<std::string> split_line(const std::string& line);
// Quotes the field only when it contains a comma, quote or whitespace edge.
std::string escape(const std::string& field);
std::string join(const std::vector<std::string>& fields);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or -1.
  long column(const std::string& name) const;
  // Like column() but throws IoError naming `what` when absent.
  std::size_t require(const std::string& name, const std::string& what) const;
};

// Reads a header line plus rows. Blank lines are skipped; rows whose width
// differs from the header throw IoError.
Table read(std::istream& in, const std::string& what);

// Round-trip shortest decimal for a double ("%.17g" trimmed when exact).
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);

}  // namespace cgiqa::csv
