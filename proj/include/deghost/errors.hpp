#pragma once

#include <stdexcept>
#include <string>

namespace deghost {

// Precondition violations on arguments (bad exposure time, shape mismatch...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or unknown configuration keys/values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing or corrupt dataset files, manifests, checkpoints.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class NumericalAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training phases invoked out of order (e.g. iterate on a pretrained checkpoint).
class StageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace deghost
