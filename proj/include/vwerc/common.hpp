#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace vwerc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between tensors.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed corpus files, unknown labels, out-of-range indices.
class DataError : public Error {
public:
    using Error::Error;
};

// Corrupt checkpoints or violated internal consistency.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Non-finite values reached a numeric kernel (degenerate softmax mask).
class NumericError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) s += ", ";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

} // namespace vwerc
