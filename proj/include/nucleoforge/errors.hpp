#pragma once

#include <stdexcept>
#include <string>

namespace nucleoforge {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct LabelError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct MissingInstanceError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InsufficientDataError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct EmptySplitError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace nucleoforge
