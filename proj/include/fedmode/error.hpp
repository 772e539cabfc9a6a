#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedmode {

enum class ErrorCode {
    InvalidCoordinate,
    NonConvergence,
    NonMonotonicTime,
    TooShort,
    EmptyFit,
    ChannelMismatch,
    UnknownMode,
    TooFewSegments,
    InfeasiblePartition,
    ShapeMismatch,
    NumericalError,
    InvalidStride,
    InvalidSpec,
    EmptyDataset,
    LayoutMismatch,
    EmptyUpdateList,
    MissingMeta,
    LengthMismatch,
    Empty,
    ParseError,
    UnknownKey,
    InvalidValue,
    Io,
};

std::string_view to_string(ErrorCode code);

// All library failures surface as this exception; `code()` identifies the
// failure class so callers (and the CLI exit-code mapping) can branch on it.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace fedmode
