#pragma once

#include <stdexcept>
#include <string>

namespace xpcb {

// Malformed or missing input data/configuration. CLI exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Checkpoint incompatible with the configuration or with another checkpoint. Exit code 3.
class ArtifactMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// NaN/inf during training or inference. Exit code 4.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace xpcb
