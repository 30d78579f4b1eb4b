#include "twinforge/error.hpp"

namespace twinforge {

std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::InvalidConfig: return "INVALID_CONFIG";
    case ErrorCode::DurationTooShort: return "DURATION_TOO_SHORT";
    case ErrorCode::OutOfRange: return "OUT_OF_RANGE";
    case ErrorCode::UnstableTimestep: return "UNSTABLE_TIMESTEP";
    case ErrorCode::NonfiniteState: return "NONFINITE_STATE";
    case ErrorCode::DuplicateId: return "DUPLICATE_ID";
    case ErrorCode::IoFailure: return "IO_FAILURE";
    case ErrorCode::NotFound: return "NOT_FOUND";
    case ErrorCode::ParseFailure: return "PARSE_FAILURE";
    case ErrorCode::ValidationFailure: return "VALIDATION_FAILURE";
    case ErrorCode::InvalidDimension: return "INVALID_DIMENSION";
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::EmptyScenarios: return "EMPTY_SCENARIOS";
    case ErrorCode::GridMismatch: return "GRID_MISMATCH";
    case ErrorCode::VersionMismatch: return "VERSION_MISMATCH";
    case ErrorCode::ZeroReference: return "ZERO_REFERENCE";
    case ErrorCode::ConstantReference: return "CONSTANT_REFERENCE";
    case ErrorCode::EmptyGroup: return "EMPTY_GROUP";
    case ErrorCode::MissingJumps: return "MISSING_JUMPS";
    case ErrorCode::KTooLarge: return "K_TOO_LARGE";
    case ErrorCode::DegenerateRange: return "DEGENERATE_RANGE";
    case ErrorCode::ConstantInput: return "CONSTANT_INPUT";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::InsufficientSamples: return "INSUFFICIENT_SAMPLES";
    case ErrorCode::MissingRom: return "MISSING_ROM";
    case ErrorCode::StoreLocked: return "STORE_LOCKED";
    case ErrorCode::StageFailure: return "STAGE_FAILURE";
    }
    return "UNKNOWN";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code)
{
}

void fail(ErrorCode code, const std::string& message)
{
    throw Error(code, message);
}

} // namespace twinforge
