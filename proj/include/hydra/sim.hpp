#pragma once

#include "hydra/classifier.hpp"
#include "hydra/image.hpp"
#include "hydra/naming.hpp"
#include "hydra/types.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hydra {

enum class FailureKind { DeadRegion, HotSpot, Flicker };

std::string_view to_string(FailureKind kind) noexcept;
FailureKind parse_failure_kind(std::string_view s);

struct Region {
    int x = 0, y = 0, width = 0, height = 0;
    friend bool operator==(const Region&, const Region&) = default;
};

// Frames start..end inclusive are corrupted. A Flicker event is dead for the
// first half of each period and normal for the rest.
struct FailureEvent {
    std::int64_t start = 0;
    std::int64_t end = 0;
    FailureKind kind = FailureKind::DeadRegion;
    Region region;
    int period = 0;
    friend bool operator==(const FailureEvent&, const FailureEvent&) = default;
};

struct FailureSchedule {
    std::vector<FailureEvent> events;

    /// Kind of the corruption applied to frame `index`, if any. The first
    /// matching event wins.
    std::optional<FailureKind> corruption_at(std::int64_t index) const;
    std::optional<std::int64_t> onset() const;
};

/// One event per line: `<kind> <start> <end> <x> <y> <w> <h> [period]`.
/// Blank lines and `#` comments are ignored. Throws InvalidSchedule.
FailureSchedule parse_schedule(std::string_view text);
FailureSchedule load_schedule(const std::filesystem::path& path);
std::string format_schedule(const FailureSchedule& schedule);
/// Throws InvalidSchedule on negative or reversed indices, a Flicker period
/// below 2, or a region outside a width x height frame.
void validate_schedule(const FailureSchedule& schedule, int width, int height);

struct StreamSpec {
    std::string plot_type;
    int width = 32;
    int height = 32;
    std::int64_t run_number = 1;
    std::int64_t frames = 1;
    UtcMillis start_time = 1'700'000'000'000;
    UtcMillis frame_interval_ms = 1000;
    std::uint64_t seed = 0;
    std::string extension = "pgm";
};

inline constexpr double kNoiseSigma = 0.05;

/// Gaussian bump plus seeded noise, then the scheduled corruption. Each frame
/// depends only on (seed, index, schedule).
Image generate_frame(const StreamSpec& spec, const FailureSchedule& schedule, std::int64_t index);

struct GroundTruthFrame {
    std::int64_t index = 0;
    std::string filename;
    bool bad = false;
    std::optional<FailureKind> failure;
};

inline constexpr std::string_view kGroundTruthFile = "ground_truth.tsv";

/// Writes every frame to `out_dir` under the file naming convention (sequence
/// = frame index) and a ground_truth.tsv log. Throws InvalidSchedule.
std::vector<GroundTruthFrame> generate_stream(const StreamSpec& spec, const FailureSchedule& schedule,
                                              const std::filesystem::path& out_dir);
std::vector<GroundTruthFrame> read_ground_truth(const std::filesystem::path& path);

struct ExperimentConfig {
    std::string plot_type = "occupancy";
    int width = 32;
    int height = 32;
    std::uint64_t seed = 1;
    int workers = 1;
    /// Training set: train_good clean frames, then train_bad frames carrying
    /// train_failure over train_region.
    int train_good = 100;
    int train_bad = 100;
    FailureKind train_failure = FailureKind::DeadRegion;
    Region train_region{8, 8, 16, 16};
    TrainingOptions training;
    std::int64_t frames = 300;
    FailureSchedule schedule;
    /// Frames copied into the input directory per feeder poll pair.
    int batch = 10;
    double collect_percentage = 0.1;
    std::filesystem::path work_dir = "experiment";
    /// Empty means an in-memory store.
    std::filesystem::path db_path;
};

/// `key = value` lines, `#` comments; `event = <schedule line>` may repeat.
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct StageSummary {
    std::string stage;
    std::size_t samples = 0;
    double mean = 0.0, median = 0.0, p95 = 0.0, max = 0.0;
};

struct FrameResult {
    std::int64_t frame = 0;
    ImageId image;
    std::string classification;
    bool truth_bad = false;
    bool predicted_bad = false;
    bool confirmed = false;
    CollectReason collect_reason = CollectReason::None;
};

struct ExperimentReport {
    double training_accuracy = 0.0;
    std::map<std::string, double> thresholds;
    std::optional<std::int64_t> onset;
    std::optional<std::int64_t> first_confirmed_bad;
    std::optional<std::int64_t> detection_latency_frames;
    std::size_t confirmed_bad_before_onset = 0;
    /// Counts by (truth, outcome) with outcome one of
    /// confirmed-bad, unconfirmed, confirmed-good.
    std::map<std::string, std::map<std::string, std::size_t>> confusion;
    std::map<std::string, std::size_t> collection;
    double collection_rate = 0.0;
    std::vector<StageSummary> stages;
    std::vector<FrameResult> frames;
    std::size_t dropped = 0;
    double elapsed_seconds = 0.0;
};

ExperimentReport run_experiment(const ExperimentConfig& config);
std::string format_experiment_report(const ExperimentReport& report);

} // namespace hydra
