#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace anno {

enum class ErrorCode {
    // interface schema
    MalformedDocument,
    UnknownComponentKind,
    InvalidProperties,
    IndexOutOfRange,
    ArityMismatch,
    InvalidResult,
    // store
    PermissionDenied,
    ValidationFailed,
    UnknownTask,
    UnknownUser,
    RoleMismatch,
    NotAssigned,
    LeaseExpired,
    StorageError,
    // learning
    NonFiniteInput,
    UnknownTaskHead,
    EmptyPool,
    MissingAlpha,
    NoLabeledData,
    UntrainedModel,
    InvalidModel,
    MissingFeature,
    // prompting
    EmptyExamples,
    PoolTooSmall,
    EmbedderUnavailable,
    ZeroVector,
    DimMismatch,
    ContextLengthExceeded,
    ApiError,
    Timeout,
    // harness
    LengthMismatch,
    MissingGold,
    InvalidParams,
    Unauthenticated,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace anno
