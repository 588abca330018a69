#pragma once

#include "hydra/classifier.hpp"
#include "hydra/store.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hydra {

struct TrainingRequest {
    TrainingSetId training_set;
    /// Where the artifact is written. Stored in the model record as given.
    std::filesystem::path artifact_path;
    /// Directory that image storage paths are relative to.
    std::filesystem::path image_root;
    TrainingOptions options;
    double collect_percentage = 0.0;
};

/// Loads every member image at the plot type's input shape, fits a
/// ReferenceClassifier, saves it and registers an inactive model. Label order
/// follows the plot type's label definitions. Throws EmptyTrainingSet.
ModelRecord train_reference(Store& store, const TrainingRequest& request, std::vector<double>* loss_history = nullptr);

/// Model output for every image of a training set, argmax index per member.
std::vector<std::size_t> predict_members(const ReferenceClassifier& model, const std::vector<Image>& images);

} // namespace hydra
