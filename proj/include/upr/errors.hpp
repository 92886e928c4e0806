#pragma once

#include <stdexcept>
#include <string>

namespace upr {

// Data-level failures: unreadable files, bad formats, malformed datasets.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric/contract failures: shape mismatches, non-finite values,
// incompatible configurations.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatch between tensors; message names the offending dimension.
class ShapeError : public NumericError {
public:
    explicit ShapeError(const std::string& msg) : NumericError(msg) {}
};

} // namespace upr
