#pragma once

#include <stdexcept>
#include <string>

namespace cogtraj {

// Validation family: caller handed us something malformed. CLI maps these to exit code 1.
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct param_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct validation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint load failures are kept as distinct types so callers can tell
// a stale format from a corrupt file from a config that does not match.
struct checkpoint_version_error : io_error {
    using io_error::io_error;
};

struct checkpoint_truncated_error : io_error {
    using io_error::io_error;
};

struct checkpoint_shape_error : io_error {
    using io_error::io_error;
};

// Abort family: the run itself went bad (non-finite loss or gradients).
// CLI maps these to exit code 2.
struct runtime_abort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace cogtraj
