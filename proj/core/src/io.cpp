#include "wflow/io.hpp"

#include "wflow/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace wflow::io {

std::string format_double(double value) {
    char buffer[32];
    const int len = std::snprintf(buffer, sizeof buffer, "%.17g", value);
    return std::string(buffer, static_cast<std::size_t>(len));
}

void atomic_write(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error("write to " + tmp.string() + " failed");
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    CsvTable table;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool have_header = false;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string_view line = trim(std::string_view(text).substr(pos, eol - pos));
        pos = eol + 1;
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (!have_header) {
            for (auto f : fields) table.header.emplace_back(trim(f));
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size()) {
            throw ParseError(path.string() + ": row has " + std::to_string(fields.size()) +
                                 " fields, header has " + std::to_string(table.header.size()),
                             line_no);
        }
        std::vector<double> row;
        row.reserve(fields.size());
        for (auto f : fields) {
            f = trim(f);
            double value = 0.0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                throw ParseError(path.string() + ": not a number: '" + std::string(f) + "'", line_no);
            }
            row.push_back(value);
        }
        table.rows.push_back(std::move(row));
    }
    if (!have_header) throw ParseError(path.string() + ": empty file", 0);
    return table;
}

}  // namespace wflow::io
