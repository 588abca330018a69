#pragma once

#include "hydra/types.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hydra {

struct InferenceQuery {
    std::optional<ImageId> image;
    std::optional<ModelId> model;
    std::optional<PlotTypeId> plot_type;
    std::optional<TimeWindow> window;
};

struct WeightPoint {
    UtcMillis time = 0;
    double weight = 0.0;
    friend bool operator==(const WeightPoint&, const WeightPoint&) = default;
};

/// Per-label output-weight time series, keyed by label name.
using WeightSeries = std::map<std::string, std::vector<WeightPoint>>;

struct LabeledImage {
    ImageRecord image;
    LabelAssignment assignment;
};

inline constexpr UtcMillis kDefaultRetentionMs = 300'000;

// Persistence for every entity in the system. Implementations must be safe for
// concurrent use: writes are serialized, readers observe committed state, and
// register_plot_type / set_active_model are atomic.
//
// History is append-only. The only mutations of existing rows are label
// supersession, the active-model flag, thresholds, collect percentage and the
// RunTime purge.
class Store {
public:
    virtual ~Store() = default;

    virtual PlotType register_plot_type(const PlotTypeSpec& spec) = 0;
    virtual void grant_labeler(PlotTypeId plot_type, const std::string& user) = 0;
    virtual std::vector<PlotType> plot_types() const = 0;
    virtual PlotType plot_type(PlotTypeId id) const = 0;
    virtual std::optional<PlotType> find_plot_type(std::string_view name) const = 0;
    virtual LabelDef label(LabelId id) const = 0;

    /// The id field of `record` is ignored; the stored record is returned.
    virtual ImageRecord add_image(const ImageRecord& record) = 0;
    virtual ImageRecord image(ImageId id) const = 0;
    virtual std::optional<ImageRecord> find_image(PlotTypeId plot_type, std::int64_t run,
                                                  std::int64_t sequence) const = 0;
    /// Puts the image on the labeling queue. Repeated calls keep the first reason.
    virtual void mark_collected(ImageId id, CollectReason reason) = 0;
    virtual std::optional<CollectReason> collection_reason(ImageId id) const = 0;

    virtual LabelAssignment assign_label(ImageId image, LabelId label, const std::string& labeler,
                                         UtcMillis at) = 0;
    virtual std::optional<LabelAssignment> current_label(ImageId image) const = 0;
    virtual std::vector<LabelAssignment> label_history(ImageId image) const = 0;
    /// Collected images with no current label, oldest capture first.
    virtual std::vector<ImageRecord> query_unlabeled(PlotTypeId plot_type, int limit,
                                                     std::optional<TimeWindow> capture_window) const = 0;
    /// Currently labeled images, newest capture first.
    virtual std::vector<LabeledImage> query_labeled(PlotTypeId plot_type, std::optional<LabelId> label,
                                                    std::optional<TimeWindow> capture_window) const = 0;

    /// Registers a model. `active` is ignored; use set_active_model.
    virtual ModelRecord add_model(const ModelRecord& record) = 0;
    virtual ModelRecord model(ModelId id) const = 0;
    virtual std::vector<ModelRecord> models(PlotTypeId plot_type) const = 0;
    virtual std::optional<ModelRecord> active_model(PlotTypeId plot_type) const = 0;
    virtual std::optional<ModelId> set_active_model(ModelId id) = 0;
    virtual void set_thresholds(ModelId model, const std::vector<ThresholdConfig>& rows) = 0;
    virtual std::vector<ThresholdConfig> thresholds(ModelId model) const = 0;
    virtual void set_collect_percentage(ModelId model, double fraction) = 0;

    virtual TrainingSet add_training_set(const TrainingSet& set) = 0;
    virtual TrainingSet training_set(TrainingSetId id) const = 0;

    virtual InferenceId record_inference(const RunHistoryEntry& entry) = 0;
    virtual std::optional<RunHistoryEntry> find_inference(InferenceId id) const = 0;
    /// Matching rows ordered by inferred_at, then inference_id.
    virtual std::vector<RunHistoryEntry> query_inferences(const InferenceQuery& query) const = 0;

    /// Returns false (and stores nothing) when the entry is already outside
    /// the retention window relative to `now`.
    virtual bool upsert_runtime(const RunTimeEntry& entry, UtcMillis now) = 0;
    /// Entries with inferred_at in [now - retention, now], newest first.
    virtual std::vector<RunTimeEntry> live_entries(std::optional<PlotTypeId> plot_type,
                                                   UtcMillis now) const = 0;
    virtual UtcMillis retention_ms() const = 0;

    // Operations composed from the primitives above.

    WeightSeries query_weight_series(PlotTypeId plot_type, TimeWindow window) const;
    std::map<LabelId, double> threshold_map(ModelId model) const;
};

std::unique_ptr<Store> make_memory_store(UtcMillis retention_ms = kDefaultRetentionMs);
/// Opens (creating if needed) an SQLite database file and initializes the schema.
std::unique_ptr<Store> open_sqlite_store(const std::filesystem::path& db_path,
                                         UtcMillis retention_ms = kDefaultRetentionMs);

namespace detail {

// Validation shared by the store backends.
void check_model_record(const ModelRecord& record, const PlotType& plot_type);
void check_inference(const RunHistoryEntry& entry, const ModelRecord& model);
void check_threshold_rows(const std::vector<ThresholdConfig>& rows, const ModelRecord& model);
void check_labeler(const PlotType& plot_type, const std::string& labeler);

} // namespace detail

} // namespace hydra
