#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace evm {

// Data-dependent failures (bad file contents, numeric divergence, ...).
// Distinct from std::invalid_argument / std::domain_error, which flag
// caller contract violations; the CLI maps the two classes to different
// exit codes.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parse failure carrying a 1-based line number.
struct ParseError : DataError {
    ParseError(const std::string& msg, std::size_t line)
        : DataError(msg + " (line " + std::to_string(line) + ")"), line(line) {}
    std::size_t line;
};

constexpr double kMicrosPerSecond = 1e6;

inline double us_to_s(std::int64_t t_us) { return static_cast<double>(t_us) / kMicrosPerSecond; }
inline std::int64_t s_to_us(double t_s) { return static_cast<std::int64_t>(std::llround(t_s * kMicrosPerSecond)); }

}  // namespace evm
