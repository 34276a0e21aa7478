#ifndef FDG_ERRORS_HPP
#define FDG_ERRORS_HPP

#include <stdexcept>

namespace fdg {

// Error taxonomy shared by all modules. The CLI maps these to exit codes:
// usage/configuration -> 1, data/format -> 2, numerical -> 3.

// Caller passed arguments that violate an operation's contract.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A requested configuration is invalid or infeasible for the given data
// (e.g. fewer eligible speakers than episode classes).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A file failed to parse: bad magic, truncation, descriptor mismatch.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or other numerical breakdown.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fdg

#endif
