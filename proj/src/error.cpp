#include "hydra/error.hpp"

namespace hydra {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::InvalidLabelSet: return "InvalidLabelSet";
    case ErrorCode::InvalidPlotType: return "InvalidPlotType";
    case ErrorCode::UnknownPlotType: return "UnknownPlotType";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::UnknownImage: return "UnknownImage";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::DuplicateImage: return "DuplicateImage";
    case ErrorCode::DuplicateInference: return "DuplicateInference";
    case ErrorCode::MalformedWeights: return "MalformedWeights";
    case ErrorCode::PermissionDenied: return "PermissionDenied";
    case ErrorCode::LabelPlotTypeMismatch: return "LabelPlotTypeMismatch";
    case ErrorCode::InvalidLimit: return "InvalidLimit";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::InvalidTrainingSet: return "InvalidTrainingSet";
    case ErrorCode::MalformedName: return "MalformedName";
    case ErrorCode::InvalidTarget: return "InvalidTarget";
    case ErrorCode::ImageDecode: return "ImageDecode";
    case ErrorCode::NoWorkers: return "NoWorkers";
    case ErrorCode::DuplicateEndpoint: return "DuplicateEndpoint";
    case ErrorCode::UnknownEndpoint: return "UnknownEndpoint";
    case ErrorCode::NoActiveModel: return "NoActiveModel";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::MissingThreshold: return "MissingThreshold";
    case ErrorCode::UnlabeledImage: return "UnlabeledImage";
    case ErrorCode::NoModel: return "NoModel";
    case ErrorCode::EmptyEvaluationSet: return "EmptyEvaluationSet";
    case ErrorCode::InvalidSchedule: return "InvalidSchedule";
    case ErrorCode::MalformedFrame: return "MalformedFrame";
    case ErrorCode::Validation: return "Validation";
    case ErrorCode::Persistence: return "Persistence";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

} // namespace hydra
