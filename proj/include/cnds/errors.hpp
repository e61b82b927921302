#pragma once

#include <stdexcept>
#include <string>

namespace cnds {

// Config text that fails to parse or validate; carries the 1-based line
// number (0 when no single line is at fault).
class ConfigError : public std::runtime_error {
public:
    ConfigError(int line, const std::string& msg)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

// Filesystem-level failure: missing file, short read, unwritable path.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally invalid file contents (bad magic, truncated payload, ...).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss; reports where.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int epoch, long long batch, const std::string& msg)
        : std::runtime_error("epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch) + ": " + msg),
          epoch_(epoch),
          batch_(batch) {}
    int epoch() const { return epoch_; }
    long long batch() const { return batch_; }

private:
    int epoch_;
    long long batch_;
};

} // namespace cnds
