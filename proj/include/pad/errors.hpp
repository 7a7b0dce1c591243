#pragma once

#include <stdexcept>
#include <string>

namespace pad {

/// Malformed files, incompatible datasets, bad configuration values.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values where the contract requires finite ones.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pad
