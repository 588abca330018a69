#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hydra {

// Integer identifiers tagged by entity so that an ImageId cannot be passed
// where a ModelId is expected.
template <class Tag>
struct Id {
    std::int64_t value = 0;

    constexpr Id() = default;
    constexpr explicit Id(std::int64_t v) : value(v) {}

    friend constexpr auto operator<=>(const Id&, const Id&) = default;
};

using PlotTypeId = Id<struct PlotTypeTag>;
using LabelId = Id<struct LabelTag>;
using ImageId = Id<struct ImageTag>;
using AssignmentId = Id<struct AssignmentTag>;
using ModelId = Id<struct ModelTag>;
using TrainingSetId = Id<struct TrainingSetTag>;
using InferenceId = Id<struct InferenceTag>;
using OrderId = Id<struct OrderTag>;

/// UTC milliseconds since the Unix epoch.
using UtcMillis = std::int64_t;

UtcMillis now_ms();

/// Closed interval [from, to] of UTC milliseconds.
struct TimeWindow {
    UtcMillis from = 0;
    UtcMillis to = 0;

    bool contains(UtcMillis t) const noexcept { return t >= from && t <= to; }
    bool valid() const noexcept { return from <= to; }
};

enum class Severity { Good, Bad, Other };
enum class CollectReason { None, BadClass, Unconfirmed, RandomSample };

std::string_view to_string(Severity s) noexcept;
std::string_view to_string(CollectReason r) noexcept;
Severity parse_severity(std::string_view s);
CollectReason parse_collect_reason(std::string_view s);

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

std::string to_hex(Rgb c);
/// Accepts "#rrggbb" or one of a handful of color names (green, red, ...).
Rgb parse_color(std::string_view s);

struct LabelSpec {
    std::string name;
    Rgb color;
    Severity severity = Severity::Other;
};

struct LabelDef {
    LabelId id;
    PlotTypeId plot_type;
    std::string name;
    Rgb color;
    Severity severity = Severity::Other;

    friend bool operator==(const LabelDef&, const LabelDef&) = default;
};

struct PlotTypeSpec {
    std::string name;
    int input_width = 0;
    int input_height = 0;
    int channels = 1;
    std::vector<LabelSpec> labels;
    std::set<std::string> allowed_labelers;
};

struct PlotType {
    PlotTypeId id;
    std::string name;
    int input_width = 0;
    int input_height = 0;
    int channels = 1;
    std::set<std::string> allowed_labelers;
    std::vector<LabelDef> labels;

    const LabelDef* find_label(LabelId id) const noexcept;
    const LabelDef* find_label(std::string_view name) const noexcept;
};

struct ImageRecord {
    ImageId id;
    PlotTypeId plot_type;
    std::int64_t run_number = 0;
    std::int64_t sequence = 0;
    UtcMillis capture_time = 0;
    std::string storage_path;  // relative to the image root
    int width = 0;
    int height = 0;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct LabelAssignment {
    AssignmentId id;
    ImageId image;
    LabelId label;
    std::string labeler;
    UtcMillis assigned_at = 0;
    bool superseded = false;

    friend bool operator==(const LabelAssignment&, const LabelAssignment&) = default;
};

struct ModelRecord {
    ModelId id;
    PlotTypeId plot_type;
    std::string artifact_path;
    std::vector<LabelId> label_order;
    bool active = false;
    std::optional<TrainingSetId> training_set;
    std::string sampling_method;
    UtcMillis created_at = 0;
    // Input shape the feeder resizes to while this model is active.
    int input_width = 0;
    int input_height = 0;
    int channels = 1;
    // Fraction of confirmed-Good images retained for labeling.
    double collect_percentage = 0.0;

    std::optional<std::size_t> index_of(LabelId label) const noexcept;

    friend bool operator==(const ModelRecord&, const ModelRecord&) = default;
};

struct ThresholdConfig {
    ModelId model;
    LabelId label;
    double threshold = 0.0;

    friend bool operator==(const ThresholdConfig&, const ThresholdConfig&) = default;
};

struct TrainingMember {
    ImageId image;
    LabelId label;
    friend bool operator==(const TrainingMember&, const TrainingMember&) = default;
};

struct TrainingSet {
    TrainingSetId id;
    PlotTypeId plot_type;
    std::vector<TrainingMember> members;
    std::string sampling_method;
    UtcMillis created_at = 0;
};

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
    friend bool operator==(const StageTiming&, const StageTiming&) = default;
};

using StageTimings = std::vector<StageTiming>;

const StageTiming* find_timing(const StageTimings& timings, std::string_view stage) noexcept;

struct RunHistoryEntry {
    InferenceId inference_id;
    ImageId image;
    ModelId model;
    std::vector<double> output_weights;
    LabelId classification;
    bool confirmed = false;
    bool collected = false;
    CollectReason collect_reason = CollectReason::None;
    StageTimings stage_timings;
    UtcMillis inferred_at = 0;

    friend bool operator==(const RunHistoryEntry&, const RunHistoryEntry&) = default;
};

struct RunTimeEntry {
    InferenceId inference_id;
    ImageId image;
    PlotTypeId plot_type;
    std::string image_path;
    std::optional<std::string> gradcam_path;
    LabelId classification;
    bool confirmed = false;
    UtcMillis inferred_at = 0;

    friend bool operator==(const RunTimeEntry&, const RunTimeEntry&) = default;
};

/// Index of the largest weight; the smallest index wins an exact tie.
std::size_t argmax(std::span<const double> weights);

/// Tolerance on |sum(weights) - 1| accepted for output weights.
inline constexpr double kWeightSumTolerance = 1e-9;

/// Throws MalformedWeights unless every entry is in [0,1], the length is
/// `expected_len` and the sum is within kWeightSumTolerance of 1.
void validate_weights(std::span<const double> weights, std::size_t expected_len);

/// Throws InvalidLabelSet / InvalidPlotType on taxonomy violations.
void validate_plot_type_spec(const PlotTypeSpec& spec);

} // namespace hydra

template <class Tag>
struct std::hash<hydra::Id<Tag>> {
    std::size_t operator()(const hydra::Id<Tag>& id) const noexcept {
        return std::hash<std::int64_t>{}(id.value);
    }
};
