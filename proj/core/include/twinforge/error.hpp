#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace twinforge {

enum class ErrorCode {
    InvalidConfig,
    DurationTooShort,
    OutOfRange,
    UnstableTimestep,
    NonfiniteState,
    DuplicateId,
    IoFailure,
    NotFound,
    ParseFailure,
    ValidationFailure,
    InvalidDimension,
    ShapeMismatch,
    EmptyScenarios,
    GridMismatch,
    VersionMismatch,
    ZeroReference,
    ConstantReference,
    EmptyGroup,
    MissingJumps,
    KTooLarge,
    DegenerateRange,
    ConstantInput,
    LengthMismatch,
    InsufficientSamples,
    MissingRom,
    StoreLocked,
    StageFailure,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library. `code()` is stable and machine-checkable;
/// `what()` carries a human-readable description prefixed with the code name.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message)
{
    if (!condition) {
        fail(code, message);
    }
}

} // namespace twinforge
