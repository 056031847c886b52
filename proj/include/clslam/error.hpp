#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace clslam {

enum class ErrorKind {
    AngleNearPi,
    BehindCamera,
    NonPositiveDepth,
    DimensionMismatch,
    NoSources,
    ZeroMeanDisparity,
    NonFinite,
    GraphNotRecorded,
    ShapeMismatch,
    SceneTooShort,
    LengthMismatch,
    NotConnected,
    SolverDiverged,
    FrameMismatch,
    TooShort,
    IncompleteSet,
    NotEnoughScenes,
    DegenerateTrajectory,
    IoError,
    MissingFile,
    ParseError,
    InconsistentLengths,
    ConfigError,
    InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` identifies the failure.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// Text without the kind prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

}  // namespace clslam
