#pragma once

#include <string>
#include <vector>

namespace fci::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Plain comma-separated files without quoting.
Table read(const std::string& path);
void write(const std::string& path, const std::string& content);

double to_double(const std::string& field, const std::string& where);
long long to_int(const std::string& field, const std::string& where);

// Shortest representation that round-trips exactly.
std::string format(double v);

}  // namespace fci::csv
