#pragma once

#include <stdexcept>
#include <string>

namespace diachron {

// Exit code contract: 0 ok, 1 usage, 2 data error, 3 internal.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, internal = 3 };

/// Bad invocation: unknown flag, out-of-range parameter, missing argument.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad input data: malformed records, violated preconditions, unreadable files.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace diachron
