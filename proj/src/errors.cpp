#include "fusionnet/errors.hpp"

namespace fusionnet {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::dimension: return "dimension error";
        case ErrorKind::config: return "config error";
        case ErrorKind::data: return "data error";
        case ErrorKind::item: return "item error";
        case ErrorKind::numeric: return "numeric error";
        case ErrorKind::io: return "io error";
        case ErrorKind::format: return "format error";
    }
    return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void throw_error(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::dimension:
        case ErrorKind::config:
        case ErrorKind::format:
            return 1;
        case ErrorKind::data:
        case ErrorKind::item:
        case ErrorKind::io:
            return 2;
        case ErrorKind::numeric:
            return 3;
    }
    return 1;
}

}  // namespace fusionnet
