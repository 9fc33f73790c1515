#include "fundus/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fundus/error.hpp"

namespace fundus {
namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::InvalidConfig, "key '" + key + "' expects a real number, got '" + text + "'");
}

long long parse_int(const std::string& key, const std::string& text) {
    long long v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        fail(ErrorKind::InvalidConfig, "key '" + key + "' expects an integer, got '" + text + "'");
    }
    return v;
}

}  // namespace

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot read config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

Config Config::parse(const std::string& text) {
    Config config;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::Format, "config line " + std::to_string(line_no) + " is not key=value: '" + t + "'");
        }
        config.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return config;
}

void Config::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Usage, "override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) {
    if (key.empty()) fail(ErrorKind::InvalidConfig, "empty config key");
    entries_[key] = value;
}

bool Config::contains(const std::string& key) const { return entries_.count(key) != 0; }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : parse_double(key, it->second);
}

long long Config::get_int(const std::string& key, long long fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : parse_int(key, it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorKind::InvalidConfig, "key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(it->second)) out.push_back(parse_double(key, item));
    return out;
}

std::vector<long long> Config::get_ints(const std::string& key, const std::vector<long long>& fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<long long> out;
    for (const auto& item : split_list(it->second)) out.push_back(parse_int(key, item));
    return out;
}

std::string Config::to_text() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

void Config::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write config file " + path.string());
    out << to_text();
}

std::string format_real(double value) {
    std::array<char, 32> buf{};
    const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), end);
}

std::string format_list(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        out += format_real(values[i]);
    }
    return out;
}

std::string format_list(const std::vector<long long>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(values[i]);
    }
    return out;
}

}  // namespace fundus
