#include "hydra/sim.hpp"

#include "hydra/alarms.hpp"
#include "hydra/analytics.hpp"
#include "hydra/error.hpp"
#include "hydra/feeder.hpp"
#include "hydra/pipeline.hpp"
#include "hydra/store.hpp"
#include "hydra/training.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace hydra {
namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(std::string_view s) {
    std::istringstream in{std::string(s)};
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

template <class T>
T parse_number(std::string_view s, ErrorCode code, std::string_view what) {
    T v{};
    if constexpr (std::is_floating_point_v<T>) {
        try {
            std::size_t used = 0;
            v = static_cast<T>(std::stod(std::string(s), &used));
            if (used == s.size()) return v;
        } catch (const std::exception&) {
        }
    } else {
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec == std::errc() && p == s.data() + s.size()) return v;
    }
    throw Error(code, "bad " + std::string(what) + " '" + std::string(s) + "'");
}

FailureEvent parse_event(std::string_view line) {
    const auto tok = split_ws(line);
    if (tok.size() != 7 && tok.size() != 8)
        throw Error(ErrorCode::InvalidSchedule, "expected '<kind> <start> <end> <x> <y> <w> <h> [period]'");
    FailureEvent e;
    e.kind = parse_failure_kind(tok[0]);
    e.start = parse_number<std::int64_t>(tok[1], ErrorCode::InvalidSchedule, "start");
    e.end = parse_number<std::int64_t>(tok[2], ErrorCode::InvalidSchedule, "end");
    e.region.x = parse_number<int>(tok[3], ErrorCode::InvalidSchedule, "x");
    e.region.y = parse_number<int>(tok[4], ErrorCode::InvalidSchedule, "y");
    e.region.width = parse_number<int>(tok[5], ErrorCode::InvalidSchedule, "width");
    e.region.height = parse_number<int>(tok[6], ErrorCode::InvalidSchedule, "height");
    if (tok.size() == 8) e.period = parse_number<int>(tok[7], ErrorCode::InvalidSchedule, "period");
    if (e.kind == FailureKind::Flicker && e.period < 2)
        throw Error(ErrorCode::InvalidSchedule, "Flicker needs a period of at least 2");
    return e;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t frame_seed_word(std::uint64_t v, int half) { return static_cast<std::uint32_t>(v >> (32 * half)); }

} // namespace

std::string_view to_string(FailureKind kind) noexcept {
    switch (kind) {
    case FailureKind::DeadRegion: return "DeadRegion";
    case FailureKind::HotSpot: return "HotSpot";
    case FailureKind::Flicker: return "Flicker";
    }
    return "DeadRegion";
}

FailureKind parse_failure_kind(std::string_view s) {
    if (s == "DeadRegion") return FailureKind::DeadRegion;
    if (s == "HotSpot") return FailureKind::HotSpot;
    if (s == "Flicker") return FailureKind::Flicker;
    throw Error(ErrorCode::InvalidSchedule, "unknown failure kind '" + std::string(s) + "'");
}

std::optional<FailureKind> FailureSchedule::corruption_at(std::int64_t index) const {
    for (const auto& e : events) {
        if (index < e.start || index > e.end) continue;
        if (e.kind == FailureKind::Flicker && (index - e.start) % e.period >= e.period / 2) continue;
        return e.kind;
    }
    return std::nullopt;
}

std::optional<std::int64_t> FailureSchedule::onset() const {
    std::optional<std::int64_t> first;
    for (const auto& e : events)
        if (!first || e.start < *first) first = e.start;
    return first;
}

FailureSchedule parse_schedule(std::string_view text) {
    FailureSchedule s;
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);) {
        auto body = std::string_view(line);
        if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
        body = trim(body);
        if (!body.empty()) s.events.push_back(parse_event(body));
    }
    return s;
}

FailureSchedule load_schedule(const fs::path& path) { return parse_schedule(read_text(path)); }

std::string format_schedule(const FailureSchedule& schedule) {
    std::string out;
    for (const auto& e : schedule.events) {
        out += fmt::format("{} {} {} {} {} {} {}", to_string(e.kind), e.start, e.end, e.region.x, e.region.y,
                           e.region.width, e.region.height);
        if (e.kind == FailureKind::Flicker) out += fmt::format(" {}", e.period);
        out += '\n';
    }
    return out;
}

void validate_schedule(const FailureSchedule& schedule, int width, int height) {
    for (const auto& e : schedule.events) {
        if (e.start < 0 || e.end < 0) throw Error(ErrorCode::InvalidSchedule, "negative frame index");
        if (e.start > e.end) throw Error(ErrorCode::InvalidSchedule, "event starts after it ends");
        if (e.kind == FailureKind::Flicker && e.period < 2)
            throw Error(ErrorCode::InvalidSchedule, "Flicker needs a period of at least 2");
        const Region& r = e.region;
        if (r.x < 0 || r.y < 0 || r.width < 1 || r.height < 1 || r.x + r.width > width || r.y + r.height > height)
            throw Error(ErrorCode::InvalidSchedule, "region outside the frame");
    }
}

Image generate_frame(const StreamSpec& spec, const FailureSchedule& schedule, std::int64_t index) {
    const auto idx = static_cast<std::uint64_t>(index);
    std::seed_seq seq{frame_seed_word(spec.seed, 0), frame_seed_word(spec.seed, 1), frame_seed_word(idx, 0),
                      frame_seed_word(idx, 1)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0.0, kNoiseSigma);

    Image img(spec.width, spec.height, 1);
    const double cx = (spec.width - 1) / 2.0, cy = (spec.height - 1) / 2.0;
    const double sigma = std::min(spec.width, spec.height) / 4.0;
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double v = 0.1 + 0.8 * std::exp(-r2 / (2 * sigma * sigma)) + noise(rng);
            img.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }

    for (const auto& e : schedule.events) {
        if (index < e.start || index > e.end) continue;
        float fill = 0.0f;
        if (e.kind == FailureKind::HotSpot) fill = 1.0f;
        else if (e.kind == FailureKind::Flicker && (index - e.start) % e.period >= e.period / 2) continue;
        for (int y = e.region.y; y < e.region.y + e.region.height; ++y)
            for (int x = e.region.x; x < e.region.x + e.region.width; ++x) img.at(x, y) = fill;
        break;
    }
    return img;
}

std::vector<GroundTruthFrame> generate_stream(const StreamSpec& spec, const FailureSchedule& schedule,
                                              const fs::path& out_dir) {
    if (spec.frames < 1) throw Error(ErrorCode::InvalidSchedule, "need at least one frame");
    validate_schedule(schedule, spec.width, spec.height);
    fs::create_directories(out_dir);

    std::vector<GroundTruthFrame> truth;
    std::ofstream log(out_dir / kGroundTruthFile);
    log << "index\tfilename\ttruth\tfailure\n";
    for (std::int64_t i = 0; i < spec.frames; ++i) {
        FileNameFields name{spec.plot_type, spec.run_number, i, spec.start_time + i * spec.frame_interval_ms,
                            spec.extension};
        GroundTruthFrame f{i, format_filename(name), false, schedule.corruption_at(i)};
        f.bad = f.failure.has_value();
        write_image(out_dir / f.filename, generate_frame(spec, schedule, i));
        log << i << '\t' << f.filename << '\t' << (f.bad ? "Bad" : "Good") << '\t'
            << (f.failure ? to_string(*f.failure) : "-") << '\n';
        truth.push_back(std::move(f));
    }
    if (!log) throw Error(ErrorCode::Io, "cannot write ground truth log");
    return truth;
}

std::vector<GroundTruthFrame> read_ground_truth(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
    std::vector<GroundTruthFrame> out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto tok = split_ws(line);
        if (tok.size() != 4) throw Error(ErrorCode::Io, "malformed ground truth line");
        GroundTruthFrame f;
        f.index = parse_number<std::int64_t>(tok[0], ErrorCode::Io, "index");
        f.filename = tok[1];
        f.bad = tok[2] == "Bad";
        if (tok[3] != "-") f.failure = parse_failure_kind(tok[3]);
        out.push_back(std::move(f));
    }
    return out;
}

ExperimentConfig parse_experiment_config(std::string_view text) {
    ExperimentConfig c;
    std::istringstream in{std::string(text)};
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        auto body = std::string_view(line);
        if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
        body = trim(body);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos)
            throw Error(ErrorCode::Validation, fmt::format("line {}: expected key = value", lineno));
        const std::string key(trim(body.substr(0, eq)));
        const std::string_view value = trim(body.substr(eq + 1));
        const auto num = [&]<class T>(T& out) { out = parse_number<T>(value, ErrorCode::Validation, key); };

        if (key == "plot_type") c.plot_type = std::string(value);
        else if (key == "width") num(c.width);
        else if (key == "height") num(c.height);
        else if (key == "seed") num(c.seed);
        else if (key == "workers") num(c.workers);
        else if (key == "train_good") num(c.train_good);
        else if (key == "train_bad") num(c.train_bad);
        else if (key == "train_failure") c.train_failure = parse_failure_kind(value);
        else if (key == "train_region") {
            const auto tok = split_ws(value);
            if (tok.size() != 4) throw Error(ErrorCode::Validation, "train_region needs x y w h");
            c.train_region = {parse_number<int>(tok[0], ErrorCode::Validation, key),
                              parse_number<int>(tok[1], ErrorCode::Validation, key),
                              parse_number<int>(tok[2], ErrorCode::Validation, key),
                              parse_number<int>(tok[3], ErrorCode::Validation, key)};
        }
        else if (key == "epochs") num(c.training.epochs);
        else if (key == "learning_rate") num(c.training.learning_rate);
        else if (key == "kernels") num(c.training.kernels);
        else if (key == "training_seed") num(c.training.seed);
        else if (key == "frames") num(c.frames);
        else if (key == "event") c.schedule.events.push_back(parse_event(value));
        else if (key == "batch") num(c.batch);
        else if (key == "collect_percentage") num(c.collect_percentage);
        else if (key == "work_dir") c.work_dir = std::string(value);
        else if (key == "db_path") c.db_path = std::string(value);
        else throw Error(ErrorCode::Validation, fmt::format("line {}: unknown key '{}'", lineno, key));
    }
    if (c.workers < 1) throw Error(ErrorCode::Validation, "workers must be at least 1");
    if (c.batch < 1) throw Error(ErrorCode::Validation, "batch must be at least 1");
    if (c.collect_percentage < 0.0 || c.collect_percentage > 1.0)
        throw Error(ErrorCode::Validation, "collect_percentage must be in [0,1]");
    return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) { return parse_experiment_config(read_text(path)); }

namespace {

StageSummary summarize(std::string stage, std::vector<double> v) {
    StageSummary s;
    s.stage = std::move(stage);
    s.samples = v.size();
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    s.median = v.size() % 2 ? v[v.size() / 2] : (v[v.size() / 2 - 1] + v[v.size() / 2]) / 2.0;
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size())));
    s.p95 = v[std::max<std::size_t>(rank, 1) - 1];
    s.max = v.back();
    return s;
}

constexpr std::int64_t kTrainingRun = 0;
constexpr std::int64_t kStreamRun = 1;

} // namespace

ExperimentReport run_experiment(const ExperimentConfig& config) {
    const auto started = std::chrono::steady_clock::now();
    ExperimentReport report;

    const fs::path work = config.work_dir;
    const fs::path image_root = work / "images", input = work / "input", reject = work / "reject",
                   staging = work / "stream", heatmaps = work / "heatmaps", dead = work / "dead-letter";
    for (const auto& dir : {image_root, input, reject, staging, heatmaps, dead}) fs::remove_all(dir);
    fs::create_directories(input);

    validate_schedule(config.schedule, config.width, config.height);
    std::unique_ptr<Store> store =
        config.db_path.empty() ? make_memory_store() : open_sqlite_store(config.db_path);

    PlotTypeSpec spec;
    spec.name = config.plot_type;
    spec.input_width = config.width;
    spec.input_height = config.height;
    spec.channels = 1;
    spec.labels = {{"Good", parse_color("green"), Severity::Good}, {"Bad", parse_color("red"), Severity::Bad}};
    spec.allowed_labelers = {"sim"};
    const PlotType pt = store->register_plot_type(spec);
    const LabelDef& good = *pt.find_label("Good");
    const LabelDef& bad = *pt.find_label("Bad");

    // Training set.
    StreamSpec train;
    train.plot_type = config.plot_type;
    train.width = config.width;
    train.height = config.height;
    train.run_number = kTrainingRun;
    train.frames = config.train_good + config.train_bad;
    train.seed = config.seed ^ 0x5bd1e995u;
    FailureSchedule train_schedule;
    if (config.train_bad > 0)
        train_schedule.events.push_back({config.train_good, train.frames - 1, config.train_failure,
                                         config.train_region, config.train_failure == FailureKind::Flicker ? 2 : 0});
    const auto train_dir = image_root / config.plot_type;
    const auto train_truth = generate_stream(train, train_schedule, train_dir);

    TrainingSet ts;
    ts.plot_type = pt.id;
    ts.sampling_method = "generated";
    ts.created_at = now_ms();
    std::vector<EvaluationItem> eval;
    for (const auto& f : train_truth) {
        ImageRecord rec;
        rec.plot_type = pt.id;
        rec.run_number = kTrainingRun;
        rec.sequence = f.index;
        rec.capture_time = train.start_time + f.index * train.frame_interval_ms;
        rec.storage_path = (fs::path(config.plot_type) / f.filename).generic_string();
        rec.width = config.width;
        rec.height = config.height;
        rec = store->add_image(rec);
        const LabelId label = f.bad ? bad.id : good.id;
        store->assign_label(rec.id, label, "sim", now_ms());
        ts.members.push_back({rec.id, label});
        eval.push_back({rec.id, label});
    }
    ts = store->add_training_set(ts);

    TrainingRequest req;
    req.training_set = ts.id;
    req.artifact_path = work / "models" / "model-1.hydm";
    req.image_root = image_root;
    req.options = config.training;
    req.collect_percentage = config.collect_percentage;
    const ModelRecord model = train_reference(*store, req);

    ScoringContext scoring;
    scoring.image_root = image_root;
    const auto samples = score_images(*store, model.id, eval, scoring);
    std::size_t correct = 0;
    for (const auto& s : samples) correct += argmax(s.weights) == s.truth;
    report.training_accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());

    const auto choices = select_default_thresholds(samples, model.label_order.size());
    std::vector<ThresholdConfig> rows;
    for (std::size_t i = 0; i < choices.size(); ++i) {
        rows.push_back({model.id, model.label_order[i], choices[i].threshold});
        report.thresholds[store->label(model.label_order[i]).name] = choices[i].threshold;
    }
    store->set_thresholds(model.id, rows);
    store->set_active_model(model.id);

    // Stream through the pipeline.
    StreamSpec stream;
    stream.plot_type = config.plot_type;
    stream.width = config.width;
    stream.height = config.height;
    stream.run_number = kStreamRun;
    stream.frames = config.frames;
    stream.seed = config.seed;
    const auto truth = generate_stream(stream, config.schedule, staging);

    AlarmBus alarms;
    PipelineOptions popts;
    popts.workers = config.workers;
    popts.worker.dead_letter_log = work / "dropped.jsonl";
    popts.keeper.heatmap_dir = heatmaps;
    popts.keeper.dead_letter_dir = dead;
    popts.keeper.seed = config.seed;
    Pipeline pipeline(*store, alarms, popts);
    pipeline.start();

    FeederOptions fopts;
    fopts.input_dir = input;
    fopts.reject_dir = reject;
    fopts.image_root = image_root;
    Feeder feeder(*store, fopts, pipeline.inbound());
    for (std::size_t i = 0; i < truth.size(); i += static_cast<std::size_t>(config.batch)) {
        const auto end = std::min(truth.size(), i + static_cast<std::size_t>(config.batch));
        for (std::size_t j = i; j < end; ++j) fs::rename(staging / truth[j].filename, input / truth[j].filename);
        feeder.scan_and_emit();
        feeder.scan_and_emit();
    }
    pipeline.stop();
    for (const auto& w : pipeline.workers()) report.dropped += w->dropped().size();
    report.dropped += pipeline.keeper().dead_lettered();

    // Evaluate against ground truth.
    report.onset = config.schedule.onset();
    InferenceQuery q;
    q.plot_type = pt.id;
    std::map<std::string, std::vector<double>> timings;
    std::size_t collected = 0;
    for (const auto& row : store->query_inferences(q)) {
        const ImageRecord rec = store->image(row.image);
        if (rec.run_number != kStreamRun) continue;
        const LabelDef label = store->label(row.classification);
        FrameResult fr;
        fr.frame = rec.sequence;
        fr.image = row.image;
        fr.classification = label.name;
        fr.truth_bad = rec.sequence < static_cast<std::int64_t>(truth.size()) && truth[static_cast<std::size_t>(rec.sequence)].bad;
        fr.predicted_bad = label.severity == Severity::Bad;
        fr.confirmed = row.confirmed;
        fr.collect_reason = row.collect_reason;
        report.frames.push_back(fr);

        const std::string outcome = !fr.confirmed ? "unconfirmed" : fr.predicted_bad ? "confirmed-bad" : "confirmed-good";
        ++report.confusion[fr.truth_bad ? "bad" : "good"][outcome];
        ++report.collection[std::string(to_string(fr.collect_reason))];
        collected += row.collected;
        for (const auto& t : row.stage_timings) timings[t.stage].push_back(t.seconds);
    }
    std::sort(report.frames.begin(), report.frames.end(),
              [](const FrameResult& a, const FrameResult& b) { return a.frame < b.frame; });
    for (const auto& fr : report.frames) {
        if (!(fr.confirmed && fr.predicted_bad)) continue;
        if (!report.first_confirmed_bad) report.first_confirmed_bad = fr.frame;
        if (!report.onset || fr.frame < *report.onset) ++report.confirmed_bad_before_onset;
    }
    if (report.onset && report.first_confirmed_bad && *report.first_confirmed_bad >= *report.onset)
        report.detection_latency_frames = *report.first_confirmed_bad - *report.onset;
    if (!report.frames.empty())
        report.collection_rate = static_cast<double>(collected) / static_cast<double>(report.frames.size());
    for (const char* stage : {"feeder", "balancer", "predict", "keeper"}) {
        auto it = timings.find(stage);
        if (it != timings.end()) report.stages.push_back(summarize(stage, std::move(it->second)));
    }

    report.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

std::string format_experiment_report(const ExperimentReport& r) {
    std::string out;
    out += fmt::format("experiment frames={} elapsed={:.3f}\n", r.frames.size(), r.elapsed_seconds);
    out += fmt::format("training accuracy={:.6f}\n", r.training_accuracy);
    for (const auto& [label, t] : r.thresholds) out += fmt::format("threshold label={} value={:.6f}\n", label, t);
    out += fmt::format("onset frame={}\n", r.onset ? std::to_string(*r.onset) : "-");
    out += fmt::format("first_confirmed_bad frame={}\n",
                       r.first_confirmed_bad ? std::to_string(*r.first_confirmed_bad) : "-");
    out += fmt::format("detection_latency frames={}\n",
                       r.detection_latency_frames ? std::to_string(*r.detection_latency_frames) : "-");
    out += fmt::format("false_alarms count={}\n", r.confirmed_bad_before_onset);
    for (const auto& [truth, row] : r.confusion)
        for (const auto& [outcome, n] : row) out += fmt::format("confusion truth={} outcome={} count={}\n", truth, outcome, n);
    for (const auto& [reason, n] : r.collection) out += fmt::format("collection reason={} count={}\n", reason, n);
    out += fmt::format("collection rate={:.6f}\n", r.collection_rate);
    for (const auto& s : r.stages)
        out += fmt::format("stage name={} n={} mean={:.6e} median={:.6e} p95={:.6e} max={:.6e}\n", s.stage, s.samples,
                           s.mean, s.median, s.p95, s.max);
    out += fmt::format("dropped count={}\n", r.dropped);
    return out;
}

} // namespace hydra
