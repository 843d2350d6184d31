#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace trajlens {

/// Shape or length mismatch in tensor / parameter arithmetic.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss. `step` / `batch_index` are -1 when
/// the failure happened outside a training loop.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what, std::int64_t step = -1,
                             std::int64_t batch_index = -1)
        : std::runtime_error(what), step(step), batch_index(batch_index) {}

    std::int64_t step;
    std::int64_t batch_index;
};

/// Replay regenerated a value that does not match the recorded log bit for
/// bit. This always indicates a nondeterminism bug, never bad data.
class ReplayDivergenceError : public std::runtime_error {
public:
    explicit ReplayDivergenceError(const std::string& what, std::int64_t step = -1)
        : std::runtime_error(what), step(step) {}

    std::int64_t step;
};

/// Malformed input file (IDX, CSV). Carries the byte offset or row where
/// parsing stopped.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what, std::int64_t offset = -1)
        : std::runtime_error(what), offset(offset) {}

    std::int64_t offset;
};

/// Trajectory file problems: bad magic, truncation, checksum mismatch.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid experiment configuration, reported before any training starts.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite intermediate inside the analyzer. Carries the step index.
class AnalysisError : public std::runtime_error {
public:
    explicit AnalysisError(const std::string& what, std::int64_t step = -1)
        : std::runtime_error(what), step(step) {}

    std::int64_t step;
};

}  // namespace trajlens
