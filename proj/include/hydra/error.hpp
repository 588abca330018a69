#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hydra {

enum class ErrorCode {
    DuplicateName,
    InvalidLabelSet,
    InvalidPlotType,
    UnknownPlotType,
    UnknownLabel,
    UnknownImage,
    UnknownModel,
    DuplicateImage,
    DuplicateInference,
    MalformedWeights,
    PermissionDenied,
    LabelPlotTypeMismatch,
    InvalidLimit,
    InvalidWindow,
    InvalidModel,
    InvalidTrainingSet,
    MalformedName,
    InvalidTarget,
    ImageDecode,
    NoWorkers,
    DuplicateEndpoint,
    UnknownEndpoint,
    NoActiveModel,
    ShapeMismatch,
    BackendFailure,
    EmptyTrainingSet,
    MissingThreshold,
    UnlabeledImage,
    NoModel,
    EmptyEvaluationSet,
    InvalidSchedule,
    MalformedFrame,
    Validation,
    Persistence,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries one of the codes above so that
// callers (CLI, HTTP adapter, tests) can branch on the kind rather than the text.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace hydra
