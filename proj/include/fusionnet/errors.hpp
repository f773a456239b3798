#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fusionnet {

enum class ErrorKind {
    dimension,  // tensor shapes do not fit together
    config,     // invalid hyperparameters or specs
    data,       // dataset content problems
    item,       // a single dataset file could not be read
    numeric,    // non-finite values
    io,         // filesystem or truncated-file problems
    format,     // well-formed file with wrong magic, version or layout
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; the kind drives CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void throw_error(ErrorKind kind, const std::string& message);

/// 0 success, 1 usage/config, 2 data, 3 numeric failure.
int exit_code(ErrorKind kind);

}  // namespace fusionnet
