#pragma once

#include <stdexcept>
#include <string>

namespace qmme {

enum class ErrorCode {
    NotPositiveDefinite,
    NotSymmetric,
    NoConvergence,
    DimensionMismatch,
    SingularShift,
    NonFiniteObjective,
    ShapeMismatch,
    NotASimplexPoint,
    HessianSolveFailed,
    LineSearchFailed,
    LengthMismatch,
    MalformedRow,
    NonNumericFeature,
    IoError,
    InvalidConfig,
    InvalidArgument,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::NotSymmetric: return "NotSymmetric";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::SingularShift: return "SingularShift";
        case ErrorCode::NonFiniteObjective: return "NonFiniteObjective";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NotASimplexPoint: return "NotASimplexPoint";
        case ErrorCode::HessianSolveFailed: return "HessianSolveFailed";
        case ErrorCode::LineSearchFailed: return "LineSearchFailed";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::MalformedRow: return "MalformedRow";
        case ErrorCode::NonNumericFeature: return "NonNumericFeature";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace qmme
