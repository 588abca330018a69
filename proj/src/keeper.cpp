#include "hydra/keeper.hpp"

#include "hydra/error.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <random>

namespace hydra {

bool confirm(const Report& report, const ModelRecord& model, const std::map<LabelId, double>& thresholds) {
    const auto it = thresholds.find(report.classification);
    if (it == thresholds.end())
        throw Error(ErrorCode::MissingThreshold, "no threshold for label " + std::to_string(report.classification.value));
    const auto index = model.index_of(report.classification);
    if (!index || *index >= report.output_weights.size())
        throw Error(ErrorCode::MalformedWeights, "classification not in model label order");
    return report.output_weights[*index] > it->second;
}

double collection_draw(std::uint64_t seed, std::int64_t draw_index) {
    const auto index = static_cast<std::uint64_t>(draw_index);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

CollectionDecision decide_collection(const Report& report, Severity severity, bool confirmed,
                                     const CollectionPolicy& policy) {
    if (severity == Severity::Bad) return {true, CollectReason::BadClass};
    if (!confirmed) return {true, CollectReason::Unconfirmed};
    if (collection_draw(policy.seed, report.image.value) < policy.collect_percentage)
        return {true, CollectReason::RandomSample};
    return {false, CollectReason::None};
}

std::filesystem::path heatmap_path(const std::filesystem::path& heatmap_dir, InferenceId id) {
    return heatmap_dir / (std::to_string(id.value) + ".pgm");
}

Keeper::Keeper(Store& store, AlarmBus& alarms, KeeperOptions options)
    : store_(store),
      alarms_(alarms),
      options_(std::move(options)),
      inbound_(std::make_shared<BoundedQueue<Report>>(options_.inbound_capacity)),
      sink_(std::make_shared<QueueSink<Report>>(inbound_)) {
    if (!options_.heatmap_dir.empty()) std::filesystem::create_directories(options_.heatmap_dir);
    if (!options_.dead_letter_dir.empty()) std::filesystem::create_directories(options_.dead_letter_dir);
}

Keeper::~Keeper() { stop(); }

const Keeper::ModelInfo& Keeper::model_info(ModelId id) {
    auto it = models_.find(id);
    if (it == models_.end()) {
        ModelRecord model = store_.model(id);
        PlotType pt = store_.plot_type(model.plot_type);
        it = models_.emplace(id, ModelInfo{std::move(model), std::move(pt)}).first;
    }
    return it->second;
}

template <class F>
void Keeper::with_retry(const char* what, F&& op) {
    auto backoff = options_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            op();
            return;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::Persistence || attempt >= options_.max_attempts) throw;
            spdlog::warn("keeper: {} failed (attempt {}): {}", what, attempt, e.what());
        }
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
}

void Keeper::dead_letter(const Report& report, const std::exception& error) {
    spdlog::error("keeper: dead-lettering order {}: {}", report.order_id.value, error.what());
    ++dead_lettered_;
    if (options_.dead_letter_dir.empty()) return;
    const auto frame = encode_report(report);
    std::ofstream out(options_.dead_letter_dir / (std::to_string(report.order_id.value) + ".report"),
                      std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
}

std::optional<RunHistoryEntry> Keeper::handle_report(const Report& report) {
    const auto start = std::chrono::steady_clock::now();
    std::lock_guard lock(mu_);
    const InferenceId id{report.order_id.value};
    try {
        std::optional<RunHistoryEntry> existing;
        with_retry("lookup", [&] { existing = store_.find_inference(id); });
        if (existing) {
            spdlog::warn("keeper: duplicate report for order {} ignored", report.order_id.value);
            ++duplicates_;
            return std::nullopt;
        }

        const ModelInfo& info = model_info(report.model);
        ModelRecord model;
        std::map<LabelId, double> thresholds;
        with_retry("model lookup", [&] {
            model = store_.model(report.model);
            thresholds = store_.threshold_map(report.model);
        });

        const bool confirmed = confirm(report, model, thresholds);
        const LabelDef* label = info.plot_type.find_label(report.classification);
        if (!label) throw Error(ErrorCode::UnknownLabel, "classification not in plot type");
        const CollectionDecision decision =
            decide_collection(report, label->severity, confirmed, {model.collect_percentage, options_.seed});

        RunHistoryEntry entry;
        entry.inference_id = id;
        entry.image = report.image;
        entry.model = report.model;
        entry.output_weights = report.output_weights;
        entry.classification = report.classification;
        entry.confirmed = confirmed;
        entry.collected = decision.collected;
        entry.collect_reason = decision.reason;
        entry.inferred_at = report.inferred_at;
        entry.stage_timings = report.stage_timings;

        std::optional<std::string> heatmap;
        if (report.gradcam && !options_.heatmap_dir.empty()) {
            const auto path = heatmap_path(options_.heatmap_dir, id);
            write_image(path, report.gradcam->to_image());
            heatmap = path.string();
        }

        ImageRecord image;
        with_retry("image lookup", [&] { image = store_.image(report.image); });

        entry.stage_timings.push_back(
            {std::string(kStageKeeper), std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
        with_retry("record inference", [&] { store_.record_inference(entry); });

        RunTimeEntry live{id, report.image, info.plot_type.id, image.storage_path, heatmap, report.classification,
                          confirmed, report.inferred_at};
        with_retry("runtime", [&] { store_.upsert_runtime(live, options_.clock()); });
        if (decision.collected) with_retry("collect", [&] { store_.mark_collected(report.image, decision.reason); });

        const bool confirmed_bad = confirmed && label->severity == Severity::Bad;
        if (confirmed_bad || !confirmed)
            alarms_.publish(AlarmEvent{0, id, info.plot_type.id, report.image, report.classification,
                                       confirmed_bad ? AlarmKind::ConfirmedBad : AlarmKind::Unconfirmed,
                                       options_.clock()});
        ++handled_;
        return entry;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::DuplicateInference) {
            ++duplicates_;
            return std::nullopt;
        }
        dead_letter(report, e);
        return std::nullopt;
    } catch (const std::exception& e) {
        dead_letter(report, e);
        return std::nullopt;
    }
}

void Keeper::start() {
    if (thread_.joinable()) return;
    thread_ = std::thread([this] { run(); });
}

void Keeper::stop() {
    inbound_->close();
    if (thread_.joinable()) thread_.join();
}

void Keeper::run() {
    while (auto report = inbound_->pop()) handle_report(*report);
}

std::uint64_t Keeper::handled() const {
    std::lock_guard lock(mu_);
    return handled_;
}

std::uint64_t Keeper::duplicates() const {
    std::lock_guard lock(mu_);
    return duplicates_;
}

std::uint64_t Keeper::dead_lettered() const {
    std::lock_guard lock(mu_);
    return dead_lettered_;
}

} // namespace hydra
