#ifndef FUNDUS_CONFIG_HPP
#define FUNDUS_CONFIG_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fundus {

/// Flat `key = value` run configuration. Keys are namespaced
/// (`train.*`, `fagnet.*`, `fgcnet.*`, `loss.*`, `data.*`). Blank lines and
/// lines starting with `#` are ignored.
class Config {
public:
    Config() = default;

    static Config load(const std::filesystem::path& path);
    static Config parse(const std::string& text);

    /// Applies a `key=value` override; later calls win.
    void apply_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    bool contains(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<long long> get_ints(const std::string& key, const std::vector<long long>& fallback) const;

    /// Keys sorted; output parses back to an equal Config.
    std::string to_text() const;
    void save(const std::filesystem::path& path) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

    bool operator==(const Config&) const = default;

private:
    std::map<std::string, std::string> entries_;
};

std::string format_list(const std::vector<double>& values);
std::string format_list(const std::vector<long long>& values);
std::string format_real(double value);

}  // namespace fundus

#endif
