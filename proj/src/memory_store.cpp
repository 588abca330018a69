#include "hydra/error.hpp"
#include "hydra/store.hpp"

#include <algorithm>
#include <mutex>
#include <shared_mutex>
#include <tuple>
#include <unordered_map>

namespace hydra {
namespace {

class MemoryStore final : public Store {
public:
    explicit MemoryStore(UtcMillis retention) : retention_(retention) {}

    PlotType register_plot_type(const PlotTypeSpec& spec) override {
        validate_plot_type_spec(spec);
        std::unique_lock lock(mu_);
        for (const auto& [id, pt] : plot_types_)
            if (pt.name == spec.name) throw Error(ErrorCode::DuplicateName, "plot type '" + spec.name + "' exists");
        PlotType pt;
        pt.id = PlotTypeId{++next_plot_type_};
        pt.name = spec.name;
        pt.input_width = spec.input_width;
        pt.input_height = spec.input_height;
        pt.channels = spec.channels;
        pt.allowed_labelers = spec.allowed_labelers;
        for (const auto& l : spec.labels) {
            LabelDef def{LabelId{++next_label_}, pt.id, l.name, l.color, l.severity};
            labels_[def.id] = def;
            pt.labels.push_back(def);
        }
        plot_types_[pt.id] = pt;
        return pt;
    }

    void grant_labeler(PlotTypeId id, const std::string& user) override {
        std::unique_lock lock(mu_);
        plot_type_ref(id).allowed_labelers.insert(user);
    }

    std::vector<PlotType> plot_types() const override {
        std::shared_lock lock(mu_);
        std::vector<PlotType> out;
        for (const auto& [id, pt] : plot_types_) out.push_back(pt);
        return out;
    }

    PlotType plot_type(PlotTypeId id) const override {
        std::shared_lock lock(mu_);
        return plot_type_ref(id);
    }

    std::optional<PlotType> find_plot_type(std::string_view name) const override {
        std::shared_lock lock(mu_);
        for (const auto& [id, pt] : plot_types_)
            if (pt.name == name) return pt;
        return std::nullopt;
    }

    LabelDef label(LabelId id) const override {
        std::shared_lock lock(mu_);
        auto it = labels_.find(id);
        if (it == labels_.end()) throw Error(ErrorCode::UnknownLabel, "label " + std::to_string(id.value));
        return it->second;
    }

    ImageRecord add_image(const ImageRecord& record) override {
        std::unique_lock lock(mu_);
        plot_type_ref(record.plot_type);
        const auto key = std::make_tuple(record.plot_type.value, record.run_number, record.sequence);
        if (image_keys_.contains(key)) throw Error(ErrorCode::DuplicateImage, "image key already registered");
        ImageRecord stored = record;
        stored.id = ImageId{++next_image_};
        images_[stored.id] = stored;
        image_keys_[key] = stored.id;
        return stored;
    }

    ImageRecord image(ImageId id) const override {
        std::shared_lock lock(mu_);
        return image_ref(id);
    }

    std::optional<ImageRecord> find_image(PlotTypeId plot_type, std::int64_t run,
                                          std::int64_t sequence) const override {
        std::shared_lock lock(mu_);
        auto it = image_keys_.find(std::make_tuple(plot_type.value, run, sequence));
        if (it == image_keys_.end()) return std::nullopt;
        return images_.at(it->second);
    }

    void mark_collected(ImageId id, CollectReason reason) override {
        std::unique_lock lock(mu_);
        image_ref(id);
        collected_.emplace(id, reason);
    }

    std::optional<CollectReason> collection_reason(ImageId id) const override {
        std::shared_lock lock(mu_);
        auto it = collected_.find(id);
        if (it == collected_.end()) return std::nullopt;
        return it->second;
    }

    LabelAssignment assign_label(ImageId image_id, LabelId label_id, const std::string& labeler,
                                 UtcMillis at) override {
        std::unique_lock lock(mu_);
        const ImageRecord& img = image_ref(image_id);
        const PlotType& pt = plot_type_ref(img.plot_type);
        detail::check_labeler(pt, labeler);
        auto lit = labels_.find(label_id);
        if (lit == labels_.end()) throw Error(ErrorCode::UnknownLabel, "label " + std::to_string(label_id.value));
        if (lit->second.plot_type != img.plot_type)
            throw Error(ErrorCode::LabelPlotTypeMismatch, "label belongs to another plot type");

        auto& history = assignments_[image_id];
        for (auto& a : history) a.superseded = true;
        LabelAssignment a{AssignmentId{++next_assignment_}, image_id, label_id, labeler, at, false};
        history.push_back(a);
        return a;
    }

    std::optional<LabelAssignment> current_label(ImageId id) const override {
        std::shared_lock lock(mu_);
        return current_label_locked(id);
    }

    std::vector<LabelAssignment> label_history(ImageId id) const override {
        std::shared_lock lock(mu_);
        auto it = assignments_.find(id);
        if (it == assignments_.end()) return {};
        return it->second;
    }

    std::vector<ImageRecord> query_unlabeled(PlotTypeId plot_type, int limit,
                                             std::optional<TimeWindow> window) const override {
        if (limit < 1) throw Error(ErrorCode::InvalidLimit, "limit must be at least 1");
        std::shared_lock lock(mu_);
        plot_type_ref(plot_type);
        std::vector<ImageRecord> out;
        for (const auto& [id, reason] : collected_) {
            const ImageRecord& img = images_.at(id);
            if (img.plot_type != plot_type || current_label_locked(id)) continue;
            if (window && !window->contains(img.capture_time)) continue;
            out.push_back(img);
        }
        std::sort(out.begin(), out.end(), [](const ImageRecord& a, const ImageRecord& b) {
            return std::tie(a.capture_time, a.id) < std::tie(b.capture_time, b.id);
        });
        if (out.size() > static_cast<std::size_t>(limit)) out.resize(static_cast<std::size_t>(limit));
        return out;
    }

    std::vector<LabeledImage> query_labeled(PlotTypeId plot_type, std::optional<LabelId> label,
                                            std::optional<TimeWindow> window) const override {
        std::shared_lock lock(mu_);
        plot_type_ref(plot_type);
        std::vector<LabeledImage> out;
        for (const auto& [id, history] : assignments_) {
            const ImageRecord& img = images_.at(id);
            if (img.plot_type != plot_type) continue;
            auto current = current_label_locked(id);
            if (!current || (label && current->label != *label)) continue;
            if (window && !window->contains(img.capture_time)) continue;
            out.push_back({img, *current});
        }
        std::sort(out.begin(), out.end(), [](const LabeledImage& a, const LabeledImage& b) {
            return std::tie(b.image.capture_time, b.image.id) < std::tie(a.image.capture_time, a.image.id);
        });
        return out;
    }

    ModelRecord add_model(const ModelRecord& record) override {
        std::unique_lock lock(mu_);
        detail::check_model_record(record, plot_type_ref(record.plot_type));
        if (record.training_set && !training_sets_.contains(*record.training_set))
            throw Error(ErrorCode::InvalidTrainingSet, "unknown training set");
        ModelRecord stored = record;
        stored.id = ModelId{++next_model_};
        stored.active = false;
        models_[stored.id] = stored;
        for (LabelId l : stored.label_order) thresholds_[stored.id][l] = 0.0;
        return stored;
    }

    ModelRecord model(ModelId id) const override {
        std::shared_lock lock(mu_);
        return model_ref(id);
    }

    std::vector<ModelRecord> models(PlotTypeId plot_type) const override {
        std::shared_lock lock(mu_);
        plot_type_ref(plot_type);
        std::vector<ModelRecord> out;
        for (const auto& [id, m] : models_)
            if (m.plot_type == plot_type) out.push_back(m);
        return out;
    }

    std::optional<ModelRecord> active_model(PlotTypeId plot_type) const override {
        std::shared_lock lock(mu_);
        for (const auto& [id, m] : models_)
            if (m.plot_type == plot_type && m.active) return m;
        return std::nullopt;
    }

    std::optional<ModelId> set_active_model(ModelId id) override {
        std::unique_lock lock(mu_);
        ModelRecord& target = model_ref(id);
        std::optional<ModelId> previous;
        for (auto& [mid, m] : models_) {
            if (m.plot_type != target.plot_type) continue;
            if (m.active) previous = mid;
            m.active = false;
        }
        target.active = true;
        return previous;
    }

    void set_thresholds(ModelId id, const std::vector<ThresholdConfig>& rows) override {
        std::unique_lock lock(mu_);
        detail::check_threshold_rows(rows, model_ref(id));
        for (const auto& row : rows) thresholds_[id][row.label] = row.threshold;
    }

    std::vector<ThresholdConfig> thresholds(ModelId id) const override {
        std::shared_lock lock(mu_);
        const ModelRecord& m = model_ref(id);
        std::vector<ThresholdConfig> out;
        const auto& table = thresholds_.at(id);
        for (LabelId l : m.label_order) out.push_back({id, l, table.at(l)});
        return out;
    }

    void set_collect_percentage(ModelId id, double fraction) override {
        if (!(fraction >= 0.0 && fraction <= 1.0))
            throw Error(ErrorCode::Validation, "collect percentage must be in [0,1]");
        std::unique_lock lock(mu_);
        model_ref(id).collect_percentage = fraction;
    }

    TrainingSet add_training_set(const TrainingSet& set) override {
        std::unique_lock lock(mu_);
        plot_type_ref(set.plot_type);
        for (const auto& m : set.members) {
            const ImageRecord& img = image_ref(m.image);
            if (img.plot_type != set.plot_type)
                throw Error(ErrorCode::InvalidTrainingSet, "member from another plot type");
            auto current = current_label_locked(m.image);
            if (!current || current->label != m.label)
                throw Error(ErrorCode::InvalidTrainingSet,
                            "member image " + std::to_string(m.image.value) + " is not labeled as recorded");
        }
        TrainingSet stored = set;
        stored.id = TrainingSetId{++next_training_set_};
        training_sets_[stored.id] = stored;
        return stored;
    }

    TrainingSet training_set(TrainingSetId id) const override {
        std::shared_lock lock(mu_);
        auto it = training_sets_.find(id);
        if (it == training_sets_.end()) throw Error(ErrorCode::InvalidTrainingSet, "unknown training set");
        return it->second;
    }

    InferenceId record_inference(const RunHistoryEntry& entry) override {
        std::unique_lock lock(mu_);
        image_ref(entry.image);
        detail::check_inference(entry, model_ref(entry.model));
        if (history_index_.contains(entry.inference_id))
            throw Error(ErrorCode::DuplicateInference, "inference " + std::to_string(entry.inference_id.value));
        history_index_[entry.inference_id] = history_.size();
        history_.push_back(entry);
        return entry.inference_id;
    }

    std::optional<RunHistoryEntry> find_inference(InferenceId id) const override {
        std::shared_lock lock(mu_);
        auto it = history_index_.find(id);
        if (it == history_index_.end()) return std::nullopt;
        return history_[it->second];
    }

    std::vector<RunHistoryEntry> query_inferences(const InferenceQuery& q) const override {
        std::shared_lock lock(mu_);
        std::vector<RunHistoryEntry> out;
        for (const auto& e : history_) {
            if (q.image && e.image != *q.image) continue;
            if (q.model && e.model != *q.model) continue;
            if (q.window && !q.window->contains(e.inferred_at)) continue;
            if (q.plot_type && images_.at(e.image).plot_type != *q.plot_type) continue;
            out.push_back(e);
        }
        std::stable_sort(out.begin(), out.end(), [](const RunHistoryEntry& a, const RunHistoryEntry& b) {
            return std::tie(a.inferred_at, a.inference_id) < std::tie(b.inferred_at, b.inference_id);
        });
        return out;
    }

    bool upsert_runtime(const RunTimeEntry& entry, UtcMillis now) override {
        std::unique_lock lock(mu_);
        const UtcMillis cutoff = now - retention_;
        std::erase_if(runtime_, [&](const auto& kv) { return kv.second.inferred_at < cutoff; });
        if (entry.inferred_at < cutoff) return false;
        runtime_[entry.inference_id] = entry;
        return true;
    }

    std::vector<RunTimeEntry> live_entries(std::optional<PlotTypeId> plot_type, UtcMillis now) const override {
        std::shared_lock lock(mu_);
        const TimeWindow window{now - retention_, now};
        std::vector<RunTimeEntry> out;
        for (const auto& [id, e] : runtime_) {
            if (!window.contains(e.inferred_at)) continue;
            if (plot_type && e.plot_type != *plot_type) continue;
            out.push_back(e);
        }
        std::sort(out.begin(), out.end(), [](const RunTimeEntry& a, const RunTimeEntry& b) {
            return std::tie(b.inferred_at, b.inference_id) < std::tie(a.inferred_at, a.inference_id);
        });
        return out;
    }

    UtcMillis retention_ms() const override { return retention_; }

private:
    PlotType& plot_type_ref(PlotTypeId id) {
        auto it = plot_types_.find(id);
        if (it == plot_types_.end()) throw Error(ErrorCode::UnknownPlotType, "plot type " + std::to_string(id.value));
        return it->second;
    }
    const PlotType& plot_type_ref(PlotTypeId id) const { return const_cast<MemoryStore*>(this)->plot_type_ref(id); }

    const ImageRecord& image_ref(ImageId id) const {
        auto it = images_.find(id);
        if (it == images_.end()) throw Error(ErrorCode::UnknownImage, "image " + std::to_string(id.value));
        return it->second;
    }

    ModelRecord& model_ref(ModelId id) {
        auto it = models_.find(id);
        if (it == models_.end()) throw Error(ErrorCode::UnknownModel, "model " + std::to_string(id.value));
        return it->second;
    }
    const ModelRecord& model_ref(ModelId id) const { return const_cast<MemoryStore*>(this)->model_ref(id); }

    std::optional<LabelAssignment> current_label_locked(ImageId id) const {
        auto it = assignments_.find(id);
        if (it == assignments_.end() || it->second.empty()) return std::nullopt;
        return it->second.back();
    }

    mutable std::shared_mutex mu_;
    UtcMillis retention_;

    std::int64_t next_plot_type_ = 0, next_label_ = 0, next_image_ = 0, next_assignment_ = 0, next_model_ = 0,
                 next_training_set_ = 0;

    std::map<PlotTypeId, PlotType> plot_types_;
    std::unordered_map<LabelId, LabelDef> labels_;
    std::map<ImageId, ImageRecord> images_;
    std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, ImageId> image_keys_;
    std::map<ImageId, CollectReason> collected_;
    std::map<ImageId, std::vector<LabelAssignment>> assignments_;
    std::map<ModelId, ModelRecord> models_;
    std::map<ModelId, std::map<LabelId, double>> thresholds_;
    std::map<TrainingSetId, TrainingSet> training_sets_;
    std::vector<RunHistoryEntry> history_;
    std::unordered_map<InferenceId, std::size_t> history_index_;
    std::map<InferenceId, RunTimeEntry> runtime_;
};

} // namespace

std::unique_ptr<Store> make_memory_store(UtcMillis retention_ms) {
    return std::make_unique<MemoryStore>(retention_ms);
}

} // namespace hydra
