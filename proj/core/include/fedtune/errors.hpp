#pragma once

#include <stdexcept>
#include <string>

namespace fedtune {

// Parameter/precondition violations throw std::invalid_argument directly.
// The types below exist so callers can distinguish failure classes.

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Carries the offending config key so diagnostics can name it.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message)
        : std::runtime_error(message), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace fedtune
