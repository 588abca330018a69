#include "hydra/types.hpp"

#include "hydra/error.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <utility>

namespace hydra {

UtcMillis now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::string_view to_string(Severity s) noexcept {
    switch (s) {
    case Severity::Good: return "Good";
    case Severity::Bad: return "Bad";
    case Severity::Other: return "Other";
    }
    return "Other";
}

std::string_view to_string(CollectReason r) noexcept {
    switch (r) {
    case CollectReason::None: return "None";
    case CollectReason::BadClass: return "BadClass";
    case CollectReason::Unconfirmed: return "Unconfirmed";
    case CollectReason::RandomSample: return "RandomSample";
    }
    return "None";
}

Severity parse_severity(std::string_view s) {
    if (s == "Good") return Severity::Good;
    if (s == "Bad") return Severity::Bad;
    if (s == "Other") return Severity::Other;
    throw Error(ErrorCode::Validation, "unknown severity '" + std::string(s) + "'");
}

CollectReason parse_collect_reason(std::string_view s) {
    if (s == "None") return CollectReason::None;
    if (s == "BadClass") return CollectReason::BadClass;
    if (s == "Unconfirmed") return CollectReason::Unconfirmed;
    if (s == "RandomSample") return CollectReason::RandomSample;
    throw Error(ErrorCode::Validation, "unknown collect reason '" + std::string(s) + "'");
}

std::string to_hex(Rgb c) {
    std::array<char, 8> buf{};
    std::snprintf(buf.data(), buf.size(), "#%02x%02x%02x", c.r, c.g, c.b);
    return std::string(buf.data(), 7);
}

Rgb parse_color(std::string_view s) {
    static constexpr std::array<std::pair<std::string_view, Rgb>, 8> named{{
        {"green", {0, 160, 0}},
        {"red", {220, 0, 0}},
        {"blue", {0, 90, 220}},
        {"yellow", {230, 200, 0}},
        {"orange", {240, 140, 0}},
        {"purple", {140, 0, 180}},
        {"gray", {128, 128, 128}},
        {"black", {0, 0, 0}},
    }};
    for (const auto& [name, rgb] : named)
        if (s == name) return rgb;

    auto hex = [](char ch) -> int {
        if (ch >= '0' && ch <= '9') return ch - '0';
        if (ch >= 'a' && ch <= 'f') return ch - 'a' + 10;
        if (ch >= 'A' && ch <= 'F') return ch - 'A' + 10;
        return -1;
    };
    if (s.size() == 7 && s[0] == '#') {
        std::array<int, 6> d{};
        for (std::size_t i = 0; i < 6; ++i) {
            d[i] = hex(s[i + 1]);
            if (d[i] < 0) break;
        }
        if (std::all_of(d.begin(), d.end(), [](int v) { return v >= 0; }))
            return Rgb{static_cast<std::uint8_t>(d[0] * 16 + d[1]),
                       static_cast<std::uint8_t>(d[2] * 16 + d[3]),
                       static_cast<std::uint8_t>(d[4] * 16 + d[5])};
    }
    throw Error(ErrorCode::Validation, "unrecognized color '" + std::string(s) + "'");
}

const LabelDef* PlotType::find_label(LabelId label) const noexcept {
    for (const auto& l : labels)
        if (l.id == label) return &l;
    return nullptr;
}

const LabelDef* PlotType::find_label(std::string_view label_name) const noexcept {
    for (const auto& l : labels)
        if (l.name == label_name) return &l;
    return nullptr;
}

std::optional<std::size_t> ModelRecord::index_of(LabelId label) const noexcept {
    for (std::size_t i = 0; i < label_order.size(); ++i)
        if (label_order[i] == label) return i;
    return std::nullopt;
}

const StageTiming* find_timing(const StageTimings& timings, std::string_view stage) noexcept {
    for (const auto& t : timings)
        if (t.stage == stage) return &t;
    return nullptr;
}

std::size_t argmax(std::span<const double> weights) {
    if (weights.empty()) throw Error(ErrorCode::MalformedWeights, "argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < weights.size(); ++i)
        if (weights[i] > weights[best]) best = i;
    return best;
}

void validate_weights(std::span<const double> weights, std::size_t expected_len) {
    if (weights.size() != expected_len)
        throw Error(ErrorCode::MalformedWeights, "expected " + std::to_string(expected_len) +
                                                     " weights, got " + std::to_string(weights.size()));
    double sum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0 || w > 1.0)
            throw Error(ErrorCode::MalformedWeights, "weight outside [0,1]");
        sum += w;
    }
    if (std::abs(sum - 1.0) > kWeightSumTolerance)
        throw Error(ErrorCode::MalformedWeights, "weights sum to " + std::to_string(sum));
}

void validate_plot_type_spec(const PlotTypeSpec& spec) {
    if (spec.name.empty() || spec.name.find_first_of("/\\") != std::string::npos)
        throw Error(ErrorCode::InvalidPlotType, "plot type name must be non-empty without path separators");
    if (spec.input_width < 8 || spec.input_height < 8)
        throw Error(ErrorCode::InvalidPlotType, "input shape must be at least 8x8");
    if (spec.channels != 1 && spec.channels != 3)
        throw Error(ErrorCode::InvalidPlotType, "channels must be 1 or 3");

    if (spec.labels.size() < 2)
        throw Error(ErrorCode::InvalidLabelSet, "a plot type needs at least two labels");
    int good = 0, bad = 0;
    std::set<std::string> names;
    for (const auto& l : spec.labels) {
        if (l.name.empty()) throw Error(ErrorCode::InvalidLabelSet, "empty label name");
        if (!names.insert(l.name).second)
            throw Error(ErrorCode::InvalidLabelSet, "duplicate label name '" + l.name + "'");
        good += l.severity == Severity::Good;
        bad += l.severity == Severity::Bad;
    }
    if (good != 1) throw Error(ErrorCode::InvalidLabelSet, "exactly one label must have severity Good");
    if (bad < 1) throw Error(ErrorCode::InvalidLabelSet, "at least one label must have severity Bad");
}

} // namespace hydra
