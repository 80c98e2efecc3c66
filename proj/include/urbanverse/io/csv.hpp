#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uv::io {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;  // every row has header.size() fields
};

// Plain comma-separated files, no quoting. Structural problems name the file
// and the 1-based line.
CsvTable readCsv(const std::string& path);
void writeCsv(const std::string& path, const std::vector<std::string>& header,
              const std::vector<std::vector<std::string>>& rows);

// Parse helpers that report the file, line, and column on failure.
double parseDouble(const std::string& s, const std::string& file, size_t line,
                   const std::string& column);
int64_t parseInt(const std::string& s, const std::string& file, size_t line,
                 const std::string& column);

// Round-trippable decimal form of a double (17 significant digits).
std::string formatDouble(double v);

}  // namespace uv::io
