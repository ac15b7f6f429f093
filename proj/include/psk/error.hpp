#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace psk {

enum class ErrorCode {
    DepthBehindCamera,
    EmptyMesh,
    ParseError,
    DegenerateFace,
    DegenerateConfiguration,
    NonConvergence,
    SingularHessian,
    NoConsensus,
    TooFewPoints,
    ShapeMismatch,
    KindMismatch,
    TooSmall,
    NonFinite,
    NoPairs,
    CropOutOfBounds,
    LengthMismatch,
    ConfigError,
    MissingCheckpoint,
    IoError,
    InvalidArgument,
};

inline std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::DepthBehindCamera: return "DepthBehindCamera";
    case ErrorCode::EmptyMesh: return "EmptyMesh";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DegenerateFace: return "DegenerateFace";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularHessian: return "SingularHessian";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NoPairs: return "NoPairs";
    case ErrorCode::CropOutOfBounds: return "CropOutOfBounds";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map them onto exit statuses.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what)
{
    throw Error(code, what);
}

} // namespace psk
