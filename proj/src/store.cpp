#include "hydra/store.hpp"

#include "hydra/error.hpp"

#include <algorithm>
#include <unordered_map>

namespace hydra {

WeightSeries Store::query_weight_series(PlotTypeId plot_type_id, TimeWindow window) const {
    if (!window.valid()) throw Error(ErrorCode::InvalidWindow, "window start after end");
    const PlotType pt = plot_type(plot_type_id);

    auto label_name = [&](LabelId id) -> const std::string& {
        const LabelDef* def = pt.find_label(id);
        if (!def) throw Error(ErrorCode::UnknownLabel, "label not in plot type");
        return def->name;
    };

    WeightSeries series;
    if (auto active = active_model(plot_type_id))
        for (LabelId l : active->label_order) series[label_name(l)];

    std::unordered_map<ModelId, ModelRecord> models_seen;
    InferenceQuery query;
    query.plot_type = plot_type_id;
    query.window = window;
    for (const auto& row : query_inferences(query)) {
        auto it = models_seen.find(row.model);
        if (it == models_seen.end()) it = models_seen.emplace(row.model, model(row.model)).first;
        const auto& order = it->second.label_order;
        for (std::size_t i = 0; i < order.size(); ++i)
            series[label_name(order[i])].push_back({row.inferred_at, row.output_weights[i]});
    }
    return series;
}

std::map<LabelId, double> Store::threshold_map(ModelId model_id) const {
    std::map<LabelId, double> out;
    for (const auto& row : thresholds(model_id)) out[row.label] = row.threshold;
    return out;
}

namespace detail {

void check_model_record(const ModelRecord& record, const PlotType& plot_type) {
    if (record.label_order.size() != plot_type.labels.size())
        throw Error(ErrorCode::InvalidModel, "label_order must be a permutation of the plot type labels");
    std::vector<LabelId> sorted_order = record.label_order;
    std::vector<LabelId> sorted_labels;
    for (const auto& l : plot_type.labels) sorted_labels.push_back(l.id);
    std::sort(sorted_order.begin(), sorted_order.end());
    std::sort(sorted_labels.begin(), sorted_labels.end());
    if (sorted_order != sorted_labels)
        throw Error(ErrorCode::InvalidModel, "label_order must be a permutation of the plot type labels");
    if (record.input_width < 8 || record.input_height < 8)
        throw Error(ErrorCode::InvalidModel, "model input shape must be at least 8x8");
    if (record.channels != 1 && record.channels != 3)
        throw Error(ErrorCode::InvalidModel, "model channels must be 1 or 3");
    if (!(record.collect_percentage >= 0.0 && record.collect_percentage <= 1.0))
        throw Error(ErrorCode::Validation, "collect percentage must be in [0,1]");
}

void check_inference(const RunHistoryEntry& entry, const ModelRecord& model) {
    validate_weights(entry.output_weights, model.label_order.size());
    const std::size_t best = argmax(entry.output_weights);
    if (model.label_order[best] != entry.classification)
        throw Error(ErrorCode::MalformedWeights, "classification is not the argmax label");
    if (entry.collected != (entry.collect_reason != CollectReason::None))
        throw Error(ErrorCode::Validation, "collected flag disagrees with collect reason");
}

void check_threshold_rows(const std::vector<ThresholdConfig>& rows, const ModelRecord& model) {
    for (const auto& row : rows) {
        if (row.model != model.id) throw Error(ErrorCode::Validation, "threshold row for another model");
        if (!model.index_of(row.label)) throw Error(ErrorCode::UnknownLabel, "label not in model label order");
        if (!(row.threshold >= 0.0 && row.threshold <= 1.0))
            throw Error(ErrorCode::Validation, "threshold must be in [0,1]");
    }
}

void check_labeler(const PlotType& plot_type, const std::string& labeler) {
    if (!plot_type.allowed_labelers.contains(labeler))
        throw Error(ErrorCode::PermissionDenied,
                    "user '" + labeler + "' may not label plot type '" + plot_type.name + "'");
}

} // namespace detail

} // namespace hydra
