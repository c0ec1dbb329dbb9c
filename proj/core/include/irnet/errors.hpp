#pragma once

#include <stdexcept>
#include <string>

namespace irnet {

// Shape or channel mismatch between tensors handed to an op.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data (label files, manifests, images).
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, int line = -1)
        : std::runtime_error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

// File I/O failure; offset is the byte position where reading stopped, if known.
class IoError : public std::runtime_error {
public:
    IoError(const std::string& msg, long long offset = -1)
        : std::runtime_error(offset >= 0 ? msg + " (byte offset " + std::to_string(offset) + ")"
                                         : msg),
          offset_(offset) {}
    long long offset() const { return offset_; }

private:
    long long offset_;
};

// Non-finite value where a finite one is required (loss, gradients).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace irnet
