#pragma once

#include <stdexcept>
#include <string>

namespace tubule {

// Malformed or inconsistent input data (bad files, geometry mismatches,
// empty masks where content is required).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values, failed certificates, diverging optimisation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tubule
