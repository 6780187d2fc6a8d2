#pragma once

#include <stdexcept>
#include <string>

namespace paretoq {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A channel whose weights are all zero; any scale derived from it would be 0.
struct AllZeroChannel : Error {
    using Error::Error;
};

// A normalized level that is not a member of the target pack format's table.
struct UnencodableLevel : Error {
    using Error::Error;
};

// Packed payload that cannot have been produced by the encoder.
struct CorruptPayload : Error {
    using Error::Error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};

struct InvalidSpec : Error {
    using Error::Error;
};

// Non-finite value reached a training-graph node.
struct NumericalDivergence : Error {
    using Error::Error;
};

} // namespace paretoq
