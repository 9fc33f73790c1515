#include "fundus/error.hpp"

#include <iostream>

namespace fundus {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "invalid-input";
        case ErrorKind::InvalidConfig: return "invalid-config";
        case ErrorKind::InvalidState: return "invalid-state";
        case ErrorKind::UndefinedMetric: return "undefined-metric";
        case ErrorKind::Format: return "format";
        case ErrorKind::Io: return "io";
        case ErrorKind::EmptyIngest: return "empty-ingest";
        case ErrorKind::Compatibility: return "compatibility";
        case ErrorKind::Usage: return "usage";
    }
    return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

void warn(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

}  // namespace fundus
