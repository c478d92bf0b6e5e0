#pragma once

#include <stdexcept>
#include <string>

namespace nesde {

// Numeric failures (exit code 4 at the CLI boundary).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SingularBasisError : NumericError {
    using NumericError::NumericError;
};

struct DefectiveMatrixError : NumericError {
    using NumericError::NumericError;
};

struct SingularInnovationError : NumericError {
    using NumericError::NumericError;
};

// Bad configuration (exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad or missing data files (exit code 3).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace nesde
