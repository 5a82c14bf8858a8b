#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace capsed {

// Error taxonomy, mapped to CLI exit codes: usage 2, data 3, numeric 4.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension contract violations in numeric code.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// NaN/Inf escaping a forward op, failed gradient state, etc.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using index_t = std::int64_t;

}  // namespace capsed
