#include "fundus/csv.hpp"

#include <fstream>
#include <sstream>

#include "fundus/error.hpp"

namespace fundus::csv {
namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

int Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
}

Table parse(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<int> starts;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool was_quoted = false;
    int line = 1;
    int record_start = 1;

    auto end_field = [&] {
        record.push_back(was_quoted ? field : trim(field));
        field.clear();
        was_quoted = false;
    };
    auto end_record = [&] {
        end_field();
        const bool blank = record.size() == 1 && record.front().empty();
        if (!blank) {
            records.push_back(std::move(record));
            starts.push_back(record_start);
        }
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                in_quotes = false;
            } else {
                if (c == '\n') ++line;
                field += c;
            }
        } else if (c == '"' && !was_quoted && trim(field).empty()) {
            in_quotes = true;
            was_quoted = true;
            field.clear();
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_record();
            ++line;
            record_start = line;
        } else if (!was_quoted && c != '\r') {
            field += c;
        }
    }
    if (in_quotes) fail(ErrorKind::Format, "unterminated quoted field starting on line " + std::to_string(record_start));
    if (!field.empty() || !record.empty() || was_quoted) end_record();

    Table table;
    if (records.empty()) return table;
    table.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        table.rows.push_back(std::move(records[r]));
        table.lines.push_back(starts[r]);
    }
    return table;
}

Table read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

std::string escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string join(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += escape(fields[i]);
    }
    return out;
}

}  // namespace fundus::csv
