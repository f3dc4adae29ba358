#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace wflow::io {

/// Shortest-stable decimal form: 17 significant digits, round-trips doubles exactly.
std::string format_double(double value);

/// Writes `content` to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

/// Numeric CSV with one header line. Every row must have as many fields as the header.
CsvTable read_csv(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

}  // namespace wflow::io
