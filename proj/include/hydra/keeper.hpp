#pragma once

#include "hydra/alarms.hpp"
#include "hydra/messages.hpp"
#include "hydra/store.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

namespace hydra {

/// True iff the classification's output weight is strictly above its
/// threshold. Throws MissingThreshold.
bool confirm(const Report& report, const ModelRecord& model, const std::map<LabelId, double>& thresholds);

struct CollectionPolicy {
    double collect_percentage = 0.0;
    std::uint64_t seed = 0;
};

struct CollectionDecision {
    bool collected = false;
    CollectReason reason = CollectReason::None;
    friend bool operator==(const CollectionDecision&, const CollectionDecision&) = default;
};

/// Uniform draw in [0,1) determined by (seed, draw_index) alone, so the result
/// does not depend on the order in which reports arrive.
double collection_draw(std::uint64_t seed, std::int64_t draw_index);

/// Precedence: BadClass, then Unconfirmed, then RandomSample (draw below the
/// collect percentage), else None. The draw index is the report's image id.
CollectionDecision decide_collection(const Report& report, Severity severity, bool confirmed,
                                     const CollectionPolicy& policy);

struct KeeperOptions {
    /// Heatmaps are written here as <inference_id>.pgm.
    std::filesystem::path heatmap_dir;
    /// Reports that cannot be persisted are written here as <order_id>.report frames.
    std::filesystem::path dead_letter_dir;
    std::uint64_t seed = 0;
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{5};
    std::size_t inbound_capacity = 1024;
    std::function<UtcMillis()> clock = now_ms;
};

std::filesystem::path heatmap_path(const std::filesystem::path& heatmap_dir, InferenceId id);

// Consumes reports from every worker: confirms against thresholds, records
// RunHistory and RunTime, queues images for labeling and raises alarms.
class Keeper {
public:
    Keeper(Store& store, AlarmBus& alarms, KeeperOptions options);
    ~Keeper();

    Keeper(const Keeper&) = delete;
    Keeper& operator=(const Keeper&) = delete;

    /// Returns the recorded entry, or nullopt for a duplicate order id or a
    /// report that had to be dead-lettered.
    std::optional<RunHistoryEntry> handle_report(const Report& report);

    std::shared_ptr<Sink<Report>> sink() const { return sink_; }
    void start();
    /// Closes the inbound channel, handles what is queued and joins.
    void stop();

    std::uint64_t handled() const;
    std::uint64_t duplicates() const;
    std::uint64_t dead_lettered() const;

private:
    struct ModelInfo {
        ModelRecord model;
        PlotType plot_type;
    };

    const ModelInfo& model_info(ModelId id);
    template <class F>
    void with_retry(const char* what, F&& op);
    void dead_letter(const Report& report, const std::exception& error);
    void run();

    Store& store_;
    AlarmBus& alarms_;
    KeeperOptions options_;

    std::shared_ptr<BoundedQueue<Report>> inbound_;
    std::shared_ptr<Sink<Report>> sink_;
    std::thread thread_;

    mutable std::mutex mu_;  // serializes handle_report
    std::map<ModelId, ModelInfo> models_;
    std::uint64_t handled_ = 0, duplicates_ = 0, dead_lettered_ = 0;
};

} // namespace hydra
