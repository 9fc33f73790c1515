#ifndef FUNDUS_ERROR_HPP
#define FUNDUS_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace fundus {

enum class ErrorKind {
    InvalidInput,
    InvalidConfig,
    InvalidState,
    UndefinedMetric,
    Format,
    Io,
    EmptyIngest,
    Compatibility,
    Usage,
};

std::string_view to_string(ErrorKind kind);

// Every failure the library reports carries a category so the CLI can map
// it onto an exit status and a prefix.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

void warn(const std::string& message);

}  // namespace fundus

#endif
