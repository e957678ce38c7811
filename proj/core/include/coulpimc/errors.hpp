#pragma once

#include <stdexcept>
#include <string>

namespace coulpimc {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 2, NumericalError -> 3, IoError -> 4.

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace coulpimc
