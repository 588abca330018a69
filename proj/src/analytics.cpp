#include "hydra/analytics.hpp"

#include "hydra/error.hpp"
#include "hydra/feeder.hpp"
#include "hydra/messages.hpp"

#include <spdlog/fmt/fmt.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

namespace hydra {

std::vector<EvaluationItem> evaluation_set_from_labels(const Store& store, std::span<const ImageId> images) {
    std::vector<EvaluationItem> out;
    out.reserve(images.size());
    for (ImageId id : images) {
        const auto label = store.current_label(id);
        if (!label) throw Error(ErrorCode::UnlabeledImage, "image " + std::to_string(id.value) + " has no label");
        out.push_back({id, label->label});
    }
    return out;
}

std::vector<ScoredSample> score_images(const Store& store, ModelId model_id, std::span<const EvaluationItem> items,
                                       const ScoringContext& context) {
    ModelRecord model;
    try {
        model = store.model(model_id);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::UnknownModel) throw Error(ErrorCode::NoModel, e.what());
        throw;
    }
    std::filesystem::path artifact = model.artifact_path;
    if (artifact.is_relative() && !context.model_root.empty()) artifact = context.model_root / artifact;
    const auto backend = context.loader(artifact);
    if (!backend || backend->label_count() != model.label_order.size())
        throw Error(ErrorCode::BackendFailure, "artifact label count disagrees with model record");

    std::vector<ScoredSample> out;
    out.reserve(items.size());
    for (const auto& item : items) {
        const auto truth = model.index_of(item.truth);
        if (!truth) throw Error(ErrorCode::LabelPlotTypeMismatch, "label not in model label order");
        const ImageRecord rec = store.image(item.image);
        const Image payload =
            load_payload(context.image_root / rec.storage_path, model.input_width, model.input_height, model.channels);
        out.push_back({item.image, softmax(backend->forward(payload).logits), *truth});
    }
    return out;
}

std::size_t EnhancedConfusionMatrix::total() const noexcept {
    std::size_t n = 0;
    for (const auto& row : cells)
        for (const auto& cell : row) n += cell.count;
    return n;
}

EnhancedConfusionMatrix build_ecm(std::vector<LabelId> labels, std::span<const ScoredSample> samples) {
    EnhancedConfusionMatrix ecm;
    const std::size_t n = labels.size();
    ecm.labels = std::move(labels);
    ecm.cells.assign(n, std::vector<EcmCell>(n));
    for (const auto& s : samples) {
        if (s.weights.size() != n || s.truth >= n) throw Error(ErrorCode::MalformedWeights, "sample does not match labels");
        const std::size_t predicted = argmax(s.weights);
        auto& cell = ecm.cells[s.truth][predicted];
        ++cell.count;
        cell.weight_samples.push_back(s.weights[predicted]);
    }
    return ecm;
}

EnhancedConfusionMatrix build_ecm(const Store& store, ModelId model, std::span<const EvaluationItem> items,
                                  const ScoringContext& context) {
    const auto samples = score_images(store, model, items, context);
    return build_ecm(store.model(model).label_order, samples);
}

double F1Counts::f1() const noexcept {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

F1Counts effective_counts(std::span<const ScoredSample> samples, std::size_t label, double threshold) {
    F1Counts c;
    for (const auto& s : samples) {
        const bool predicted = argmax(s.weights) == label && s.weights[label] > threshold;
        const bool actual = s.truth == label;
        if (predicted && actual) ++c.tp;
        else if (predicted) ++c.fp;
        else if (actual) ++c.fn;
    }
    return c;
}

double effective_f1(std::span<const ScoredSample> samples, std::size_t label, double threshold) {
    return effective_counts(samples, label, threshold).f1();
}

std::vector<ThresholdChoice> select_default_thresholds(std::span<const ScoredSample> samples, std::size_t label_count) {
    if (samples.empty()) throw Error(ErrorCode::EmptyEvaluationSet, "no evaluation samples");
    std::vector<ThresholdChoice> out;
    for (std::size_t label = 0; label < label_count; ++label) {
        std::set<double> candidates{0.0};
        for (const auto& s : samples)
            if (argmax(s.weights) == label) candidates.insert(s.weights[label]);
        ThresholdChoice best{0.0, -1.0};
        for (double t : candidates) {
            const double f = effective_f1(samples, label, t);
            if (f > best.f1) best = {t, f};
        }
        out.push_back(best);
    }
    return out;
}

std::vector<ThresholdChoice> select_default_thresholds(Store& store, ModelId model_id,
                                                       std::span<const EvaluationItem> items,
                                                       const ScoringContext& context) {
    const auto samples = score_images(store, model_id, items, context);
    const ModelRecord model = store.model(model_id);
    auto choices = select_default_thresholds(samples, model.label_order.size());
    std::vector<ThresholdConfig> rows;
    for (std::size_t i = 0; i < choices.size(); ++i) rows.push_back({model_id, model.label_order[i], choices[i].threshold});
    store.set_thresholds(model_id, rows);
    return choices;
}

std::vector<Disagreement> training_diff(std::span<const LabelId> labels, std::span<const ScoredSample> samples) {
    std::vector<Disagreement> out;
    for (const auto& s : samples) {
        const std::size_t predicted = argmax(s.weights);
        if (predicted == s.truth) continue;
        out.push_back({s.image, labels[s.truth], labels[predicted], s.weights, s.weights[predicted]});
    }
    std::stable_sort(out.begin(), out.end(), [](const Disagreement& a, const Disagreement& b) {
        if (a.model_weight != b.model_weight) return a.model_weight > b.model_weight;
        return a.image < b.image;
    });
    return out;
}

const std::array<double, kHistogramBuckets + 1>& histogram_edges() {
    static const auto edges = [] {
        std::array<double, kHistogramBuckets + 1> e{};
        const double decades = std::log10(kHistogramMaxSeconds / kHistogramMinSeconds);
        for (int i = 0; i <= kHistogramBuckets; ++i)
            e[static_cast<std::size_t>(i)] = kHistogramMinSeconds * std::pow(10.0, decades * i / kHistogramBuckets);
        return e;
    }();
    return edges;
}

int histogram_bucket(double seconds) noexcept {
    const auto& edges = histogram_edges();
    const auto it = std::upper_bound(edges.begin(), edges.end(), seconds);
    const auto idx = static_cast<int>(it - edges.begin()) - 1;
    return std::clamp(idx, 0, kHistogramBuckets - 1);
}

std::size_t LatencyHistogram::total() const noexcept {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
}

namespace {

int stage_rank(const std::string& stage) {
    static const std::string_view order[] = {kStageFeeder, kStageBalancer, kStagePredict, kStageKeeper};
    for (int i = 0; i < 4; ++i)
        if (stage == order[i]) return i;
    return 4;
}

bool stage_less(const std::string& a, const std::string& b) {
    const int ra = stage_rank(a), rb = stage_rank(b);
    return ra != rb ? ra < rb : a < b;
}

} // namespace

StatusMetrics status_metrics(const Store& store, TimeWindow window, std::optional<PlotTypeId> plot_type) {
    if (!window.valid()) throw Error(ErrorCode::InvalidWindow, "window start after end");
    StatusMetrics out;
    out.window = window;

    InferenceQuery q;
    q.plot_type = plot_type;
    q.window = window;
    std::map<std::string, LatencyHistogram> hist;
    std::map<std::string, std::map<std::int64_t, std::pair<double, std::size_t>>> sums;
    std::unordered_map<ImageId, std::int64_t> runs;
    for (const auto& row : store.query_inferences(q)) {
        auto run = runs.find(row.image);
        if (run == runs.end()) run = runs.emplace(row.image, store.image(row.image).run_number).first;
        for (const auto& t : row.stage_timings) {
            auto& h = hist[t.stage];
            h.stage = t.stage;
            ++h.counts[static_cast<std::size_t>(histogram_bucket(t.seconds))];
            auto& s = sums[t.stage][run->second];
            s.first += t.seconds;
            ++s.second;
        }
    }

    std::vector<std::string> stages;
    for (const auto& [name, h] : hist) stages.push_back(name);
    std::sort(stages.begin(), stages.end(), stage_less);
    for (const auto& name : stages) {
        out.histograms.push_back(hist[name]);
        auto& series = out.per_run[name];
        for (const auto& [run, s] : sums[name]) series.push_back({run, s.first / static_cast<double>(s.second), s.second});
    }
    return out;
}

LogDigest build_log_digest(const Store& store, TimeWindow window, std::optional<PlotTypeId> plot_type,
                           const std::filesystem::path& heatmap_dir) {
    if (!window.valid()) throw Error(ErrorCode::InvalidWindow, "window start after end");
    LogDigest out;
    out.window = window;
    InferenceQuery q;
    q.plot_type = plot_type;
    q.window = window;
    std::unordered_map<LabelId, LabelDef> labels;
    std::unordered_map<ImageId, PlotTypeId> image_plot;
    for (const auto& row : store.query_inferences(q)) {
        auto l = labels.find(row.classification);
        if (l == labels.end()) l = labels.emplace(row.classification, store.label(row.classification)).first;
        const LabelDef& def = l->second;
        if (row.confirmed && def.severity != Severity::Bad) continue;

        LogEntry e;
        e.inference = row.inference_id;
        e.image = row.image;
        e.plot_type = def.plot_type;
        e.classification = row.classification;
        e.label_name = def.name;
        e.severity = def.severity;
        e.confirmed = row.confirmed;
        e.inferred_at = row.inferred_at;
        if (!heatmap_dir.empty()) {
            const auto path = heatmap_dir / (std::to_string(row.inference_id.value) + ".pgm");
            if (std::filesystem::exists(path)) e.heatmap = path.string();
        }
        out.entries.push_back(std::move(e));
    }
    std::sort(out.entries.begin(), out.entries.end(), [](const LogEntry& a, const LogEntry& b) {
        if (a.inferred_at != b.inferred_at) return a.inferred_at > b.inferred_at;
        return a.inference > b.inference;
    });
    return out;
}

namespace {

std::vector<std::string> label_names(const Store& store, const std::vector<LabelId>& order) {
    std::vector<std::string> names;
    for (LabelId id : order) names.push_back(store.label(id).name);
    return names;
}

} // namespace

std::string format_ecm(const Store& store, ModelId model, const EnhancedConfusionMatrix& ecm) {
    const auto names = label_names(store, ecm.labels);
    std::string out = fmt::format("ecm model={} labels={} total={}\n", model.value, names.size(), ecm.total());
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t j = 0; j < names.size(); ++j) {
            const auto& cell = ecm.cells[i][j];
            std::string weights;
            for (std::size_t k = 0; k < cell.weight_samples.size(); ++k)
                weights += fmt::format("{}{:.6f}", k ? "," : "", cell.weight_samples[k]);
            out += fmt::format("cell true={} predicted={} count={} weights={}\n", names[i], names[j], cell.count,
                               weights.empty() ? "-" : weights);
        }
    return out;
}

std::string format_thresholds(const Store& store, ModelId model, std::span<const ThresholdChoice> choices) {
    const auto names = label_names(store, store.model(model).label_order);
    std::string out;
    for (std::size_t i = 0; i < choices.size() && i < names.size(); ++i)
        out += fmt::format("threshold model={} label={} value={:.6f} f1={:.6f}\n", model.value, names[i],
                           choices[i].threshold, choices[i].f1);
    return out;
}

std::string format_diff(const Store& store, ModelId model, std::span<const Disagreement> diff) {
    std::string out = fmt::format("diff model={} disagreements={}\n", model.value, diff.size());
    for (const auto& d : diff)
        out += fmt::format("image={} human={} model={} weight={:.6f}\n", d.image.value, store.label(d.human_label).name,
                           store.label(d.model_label).name, d.model_weight);
    return out;
}

std::string format_status(const StatusMetrics& m) {
    std::string out = fmt::format("status from={} to={} stages={}\n", m.window.from, m.window.to, m.histograms.size());
    const auto& edges = histogram_edges();
    for (const auto& h : m.histograms) {
        out += fmt::format("histogram stage={} total={}\n", h.stage, h.total());
        for (int b = 0; b < kHistogramBuckets; ++b) {
            const auto i = static_cast<std::size_t>(b);
            if (h.counts[i] == 0) continue;
            out += fmt::format("bucket stage={} index={} lo={:.3e} hi={:.3e} count={}\n", h.stage, b, edges[i],
                               edges[i + 1], h.counts[i]);
        }
        const auto it = m.per_run.find(h.stage);
        if (it == m.per_run.end()) continue;
        for (const auto& r : it->second)
            out += fmt::format("run stage={} run={} mean={:.6e} n={}\n", h.stage, r.run_number, r.mean_seconds, r.samples);
    }
    return out;
}

std::string format_log(const LogDigest& d) {
    std::string out = fmt::format("log from={} to={} entries={}\n", d.window.from, d.window.to, d.entries.size());
    for (const auto& e : d.entries)
        out += fmt::format("entry inference={} image={} at={} label={} severity={} confirmed={} heatmap={}\n",
                           e.inference.value, e.image.value, e.inferred_at, e.label_name, to_string(e.severity),
                           e.confirmed ? 1 : 0, e.heatmap.value_or("-"));
    return out;
}

} // namespace hydra
