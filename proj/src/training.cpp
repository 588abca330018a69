#include "hydra/training.hpp"

#include "hydra/error.hpp"
#include "hydra/feeder.hpp"

#include <algorithm>

namespace hydra {

ModelRecord train_reference(Store& store, const TrainingRequest& request, std::vector<double>* loss_history) {
    const TrainingSet set = store.training_set(request.training_set);
    if (set.members.empty()) throw Error(ErrorCode::EmptyTrainingSet, "training set has no members");
    const PlotType pt = store.plot_type(set.plot_type);

    std::vector<LabelId> order;
    for (const auto& l : pt.labels) order.push_back(l.id);

    std::vector<Image> images;
    std::vector<std::size_t> targets;
    for (const auto& m : set.members) {
        const ImageRecord rec = store.image(m.image);
        if (rec.plot_type != pt.id)
            throw Error(ErrorCode::InvalidTrainingSet, "image " + std::to_string(rec.id.value) + " has another plot type");
        const auto it = std::find(order.begin(), order.end(), m.label);
        if (it == order.end()) throw Error(ErrorCode::LabelPlotTypeMismatch, "member label not in plot type");
        images.push_back(load_payload(request.image_root / rec.storage_path, pt.input_width, pt.input_height,
                                      pt.channels));
        targets.push_back(static_cast<std::size_t>(it - order.begin()));
    }

    const auto model = fit_reference(pt.id, order, pt.channels, images, targets, request.options, loss_history);
    if (!request.artifact_path.parent_path().empty())
        std::filesystem::create_directories(request.artifact_path.parent_path());
    model.save(request.artifact_path);

    ModelRecord rec;
    rec.plot_type = pt.id;
    rec.artifact_path = request.artifact_path.string();
    rec.label_order = order;
    rec.training_set = set.id;
    rec.sampling_method = set.sampling_method;
    rec.created_at = now_ms();
    rec.input_width = pt.input_width;
    rec.input_height = pt.input_height;
    rec.channels = pt.channels;
    rec.collect_percentage = request.collect_percentage;
    return store.add_model(rec);
}

std::vector<std::size_t> predict_members(const ReferenceClassifier& model, const std::vector<Image>& images) {
    std::vector<std::size_t> out;
    out.reserve(images.size());
    for (const auto& img : images) {
        const auto fwd = model.forward(img);
        out.push_back(argmax(softmax(fwd.logits)));
    }
    return out;
}

} // namespace hydra
