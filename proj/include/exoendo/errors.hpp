#pragma once

#include <stdexcept>
#include <string>

namespace exoendo {

struct dimension_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct singularity_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct retraction_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace exoendo
