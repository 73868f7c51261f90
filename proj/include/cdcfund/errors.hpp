#pragma once

#include <stdexcept>
#include <string>

namespace cdcfund {

/// Argument outside an operation's mathematical domain.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Fund state that an operation cannot act on (e.g. non-positive asset).
class InvalidStateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// GP factorization failed for every candidate hyperparameter.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration problem tied to a key and, for parse errors, a line/column.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what, int line = 0, int column = 0)
        : std::runtime_error(format(key, what, line, column)),
          key_(std::move(key)), line_(line), column_(column) {}

    [[nodiscard]] const std::string& key() const { return key_; }
    [[nodiscard]] int line() const { return line_; }
    [[nodiscard]] int column() const { return column_; }

private:
    static std::string format(const std::string& key, const std::string& what, int line,
                              int column) {
        std::string out;
        if (line > 0) out += "line " + std::to_string(line) + ", column " + std::to_string(column) + ": ";
        if (!key.empty()) out += "'" + key + "': ";
        return out + what;
    }

    std::string key_;
    int line_;
    int column_;
};

}  // namespace cdcfund
