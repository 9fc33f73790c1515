#ifndef FUNDUS_CSV_HPP
#define FUNDUS_CSV_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace fundus::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    // 1-based file line of each row (header is line 1).
    std::vector<int> lines;

    /// Column position by name, or -1.
    int column(const std::string& name) const;
};

/// RFC 4180-style reader: quoted fields may hold commas, doubled quotes and
/// newlines. Fields are trimmed of surrounding whitespace.
Table parse(const std::string& text);
Table read(const std::filesystem::path& path);

std::string escape(const std::string& field);
std::string join(const std::vector<std::string>& fields);

}  // namespace fundus::csv

#endif
