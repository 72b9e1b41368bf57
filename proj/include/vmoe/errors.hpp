#pragma once

#include <stdexcept>

namespace vmoe {

// Configuration or precondition violation. CLI exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Backend transport/protocol failure. CLI exit code 2.
struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed fixture file. CLI exit code 3.
struct FixtureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Metric-domain violation (zero-norm embedding, dimension mismatch).
struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace vmoe
