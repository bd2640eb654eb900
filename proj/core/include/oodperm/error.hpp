#pragma once

#include <stdexcept>
#include <string>

namespace oodperm {

/// Raised for malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for invalid input data: malformed files, violated set invariants,
/// unmet statistic preconditions and IO failures.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace oodperm
