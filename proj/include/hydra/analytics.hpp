#pragma once

#include "hydra/classifier.hpp"
#include "hydra/store.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hydra {

/// One evaluated image: the model's output weights (in model label order) and
/// the index of the human label in that order.
struct ScoredSample {
    ImageId image;
    std::vector<double> weights;
    std::size_t truth = 0;
};

struct EvaluationItem {
    ImageId image;
    LabelId truth;
};

/// Pairs each image with its current human label. Throws UnlabeledImage.
std::vector<EvaluationItem> evaluation_set_from_labels(const Store& store, std::span<const ImageId> images);

struct ScoringContext {
    std::filesystem::path image_root;
    /// Relative artifact paths are resolved against this directory.
    std::filesystem::path model_root;
    BackendLoader loader = reference_loader();
};

/// Runs the model over each image (loaded at the model's input shape).
/// Throws NoModel for an unknown model id.
std::vector<ScoredSample> score_images(const Store& store, ModelId model, std::span<const EvaluationItem> items,
                                       const ScoringContext& context);

struct EcmCell {
    std::size_t count = 0;
    /// Weight given to the predicted label, in evaluation order.
    std::vector<double> weight_samples;
    friend bool operator==(const EcmCell&, const EcmCell&) = default;
};

// cells[true][predicted], indices in `labels` order.
struct EnhancedConfusionMatrix {
    std::vector<LabelId> labels;
    std::vector<std::vector<EcmCell>> cells;

    std::size_t total() const noexcept;
    friend bool operator==(const EnhancedConfusionMatrix&, const EnhancedConfusionMatrix&) = default;
};

EnhancedConfusionMatrix build_ecm(std::vector<LabelId> labels, std::span<const ScoredSample> samples);
EnhancedConfusionMatrix build_ecm(const Store& store, ModelId model, std::span<const EvaluationItem> items,
                                  const ScoringContext& context);

struct F1Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
    double f1() const noexcept;
};

/// A sample is predicted as `label` iff its argmax is `label` and its weight
/// for `label` is strictly above `threshold`.
F1Counts effective_counts(std::span<const ScoredSample> samples, std::size_t label, double threshold);
double effective_f1(std::span<const ScoredSample> samples, std::size_t label, double threshold);

struct ThresholdChoice {
    double threshold = 0.0;
    double f1 = 0.0;
};

/// Per label, the candidate in {0} ∪ {argmax weights of samples predicted as
/// that label} with the highest effective F1, lowest candidate on ties.
/// Throws EmptyEvaluationSet.
std::vector<ThresholdChoice> select_default_thresholds(std::span<const ScoredSample> samples, std::size_t label_count);
/// Scores, selects and persists the thresholds for `model`.
std::vector<ThresholdChoice> select_default_thresholds(Store& store, ModelId model,
                                                       std::span<const EvaluationItem> items,
                                                       const ScoringContext& context);

struct Disagreement {
    ImageId image;
    LabelId human_label;
    LabelId model_label;
    std::vector<double> model_weights;
    double model_weight = 0.0;  // weight of model_label
    friend bool operator==(const Disagreement&, const Disagreement&) = default;
};

/// Samples whose argmax differs from the human label, most confident first
/// (ties by image id).
std::vector<Disagreement> training_diff(std::span<const LabelId> labels, std::span<const ScoredSample> samples);

inline constexpr int kHistogramBuckets = 24;
inline constexpr double kHistogramMinSeconds = 1e-6;
inline constexpr double kHistogramMaxSeconds = 100.0;

/// 25 edges, log-spaced from 1 µs to 100 s. Bucket i covers [edge i, edge i+1);
/// durations outside the range land in the first or last bucket.
const std::array<double, kHistogramBuckets + 1>& histogram_edges();
int histogram_bucket(double seconds) noexcept;

struct LatencyHistogram {
    std::string stage;
    std::array<std::size_t, kHistogramBuckets> counts{};
    std::size_t total() const noexcept;
};

struct RunMean {
    std::int64_t run_number = 0;
    double mean_seconds = 0.0;
    std::size_t samples = 0;
};

struct StatusMetrics {
    TimeWindow window;
    /// Stages in pipeline order, then any others by name.
    std::vector<LatencyHistogram> histograms;
    std::map<std::string, std::vector<RunMean>> per_run;
};

StatusMetrics status_metrics(const Store& store, TimeWindow window, std::optional<PlotTypeId> plot_type = {});

inline constexpr UtcMillis kDefaultLogWindowMs = 24LL * 3600 * 1000;

struct LogEntry {
    InferenceId inference;
    ImageId image;
    PlotTypeId plot_type;
    LabelId classification;
    std::string label_name;
    Severity severity = Severity::Other;
    bool confirmed = false;
    UtcMillis inferred_at = 0;
    std::optional<std::string> heatmap;
};

struct LogDigest {
    TimeWindow window;
    std::vector<LogEntry> entries;
};

/// Confirmed-Bad and unconfirmed inferences in the window, newest first.
/// Heatmap references are filled in from `heatmap_dir` when the file exists.
LogDigest build_log_digest(const Store& store, TimeWindow window, std::optional<PlotTypeId> plot_type = {},
                           const std::filesystem::path& heatmap_dir = {});

// Line-oriented text renderings (see docs/analytics-output.md).
std::string format_ecm(const Store& store, ModelId model, const EnhancedConfusionMatrix& ecm);
std::string format_thresholds(const Store& store, ModelId model, std::span<const ThresholdChoice> choices);
std::string format_diff(const Store& store, ModelId model, std::span<const Disagreement> diff);
std::string format_status(const StatusMetrics& metrics);
std::string format_log(const LogDigest& digest);

} // namespace hydra
