#include "hydra/api.hpp"

#include "hydra/error.hpp"
#include "hydra/image.hpp"
#include "hydra/keeper.hpp"

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <limits>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace hydra {
namespace {

struct HttpError {
    int status;
    std::string code;
    std::string message;
};

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

HttpError map_error(const Error& e) {
    switch (e.code()) {
    case ErrorCode::PermissionDenied: return {403, "PermissionDenied", e.what()};
    case ErrorCode::UnknownPlotType:
    case ErrorCode::UnknownLabel:
    case ErrorCode::UnknownImage:
    case ErrorCode::UnknownModel:
    case ErrorCode::NoModel: return {404, "UnknownEntity", e.what()};
    case ErrorCode::Persistence:
    case ErrorCode::Io:
    case ErrorCode::BackendFailure: return {500, "Persistence", e.what()};
    default: return {400, "Validation", e.what()};
    }
}

ApiResponse json_response(const json& body, int status = 200) { return {status, "application/json", body.dump()}; }

ApiResponse error_response(const HttpError& e) {
    return json_response(json{{"error", e.code}, {"message", e.message}}, e.status);
}

[[noreturn]] void fail(int status, std::string code, std::string message) {
    throw HttpError{status, std::move(code), std::move(message)};
}

std::int64_t parse_int(std::string_view s, std::string_view what) {
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
        fail(400, "Validation", "parameter '" + std::string(what) + "' must be an integer");
    return v;
}

std::vector<std::string> segments(std::string_view path) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < path.size()) {
        while (i < path.size() && path[i] == '/') ++i;
        const auto j = path.find('/', i);
        const auto end = j == std::string_view::npos ? path.size() : j;
        if (end > i) out.emplace_back(path.substr(i, end - i));
        i = end;
    }
    return out;
}

std::string content_type_for(const fs::path& p) {
    const auto ext = lower(p.extension().string());
    if (ext == ".png") return "image/png";
    if (ext == ".ppm") return "image/x-portable-pixmap";
    return "image/x-portable-graymap";
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(404, "UnknownEntity", "file not found: " + p.filename().string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json to_json(const LabelDef& l) {
    return {{"id", l.id.value},
            {"plot_type", l.plot_type.value},
            {"name", l.name},
            {"color", to_hex(l.color)},
            {"severity", to_string(l.severity)}};
}

json to_json(const PlotType& pt) {
    json labels = json::array();
    for (const auto& l : pt.labels) labels.push_back(to_json(l));
    return {{"id", pt.id.value},
            {"name", pt.name},
            {"input_width", pt.input_width},
            {"input_height", pt.input_height},
            {"channels", pt.channels},
            {"allowed_labelers", pt.allowed_labelers},
            {"labels", labels}};
}

json to_json(const ImageRecord& r) {
    return {{"id", r.id.value},
            {"plot_type", r.plot_type.value},
            {"run_number", r.run_number},
            {"sequence", r.sequence},
            {"capture_time", r.capture_time},
            {"storage_path", r.storage_path},
            {"width", r.width},
            {"height", r.height}};
}

json to_json(const LabelAssignment& a) {
    return {{"assignment_id", a.id.value},
            {"image_id", a.image.value},
            {"label_id", a.label.value},
            {"labeler", a.labeler},
            {"assigned_at", a.assigned_at}};
}

json to_json(const AlarmEvent& e) {
    return {{"sequence", e.sequence},
            {"inference_id", e.inference.value},
            {"plot_type", e.plot_type.value},
            {"image_id", e.image.value},
            {"classification", e.classification.value},
            {"kind", to_string(e.kind)},
            {"raised_at", e.raised_at}};
}

} // namespace

std::optional<std::string> ApiRequest::header(std::string_view name) const {
    const auto want = lower(name);
    for (const auto& [k, v] : headers)
        if (lower(k) == want) return v;
    return std::nullopt;
}

ApiConfig api_config_from_env(ApiConfig c) {
    if (const char* db = std::getenv("HYDRA_DB_PATH")) c.db_path = db;
    if (const char* root = std::getenv("HYDRA_IMAGE_ROOT")) c.image_root = root;
    if (const char* listen = std::getenv("HYDRA_LISTEN")) {
        const std::string_view s(listen);
        const auto colon = s.rfind(':');
        if (colon == std::string_view::npos) throw Error(ErrorCode::Validation, "HYDRA_LISTEN must be host:port");
        c.host = std::string(s.substr(0, colon));
        c.port = static_cast<int>(parse_int(s.substr(colon + 1), "HYDRA_LISTEN port"));
    }
    if (c.heatmap_dir.empty() && !c.image_root.empty()) c.heatmap_dir = c.image_root / "heatmaps";
    if (c.model_root.empty()) c.model_root = c.image_root;
    return c;
}

class ApiHandler {
public:
    ApiHandler(Store& store, AlarmBus& alarms, const ApiConfig& config)
        : store_(store), alarms_(alarms), config_(config) {}

    ApiResponse handle(const ApiRequest& req) {
        req_ = &req;
        const auto seg = segments(req.path);
        const auto& m = req.method;
        const auto is = [&](std::initializer_list<std::string_view> want) {
            if (seg.size() != want.size()) return false;
            std::size_t i = 0;
            for (auto w : want) {
                if (w != "*" && seg[i] != w) return false;
                ++i;
            }
            return true;
        };

        if (m == "GET" && is({"plot-types"})) return get_plot_types();
        if (m == "GET" && is({"labels"})) return get_labels();
        if (m == "POST" && is({"labels"})) return post_label();
        if (m == "GET" && is({"unlabeled"})) return get_unlabeled();
        if (m == "GET" && is({"labeled"})) return get_labeled();
        if (m == "GET" && is({"models"})) return get_models();
        if (m == "POST" && is({"models", "*", "activate"})) return activate(model_param(seg[1]));
        if (m == "GET" && is({"models", "*", "ecm"})) return get_ecm(model_param(seg[1]));
        if (m == "GET" && is({"models", "*", "thresholds"})) return get_thresholds(model_param(seg[1]));
        if (m == "PUT" && is({"models", "*", "thresholds"})) return put_thresholds(model_param(seg[1]));
        if (m == "GET" && is({"run", "live"})) return get_live();
        if (m == "GET" && is({"images", "*"})) return get_image(ImageId{parse_int(seg[1], "image id")});
        if (m == "GET" && is({"heatmaps", "*"})) return get_heatmap(InferenceId{parse_int(seg[1], "inference id")});
        if (m == "GET" && is({"status"})) return get_status();
        if (m == "GET" && is({"log"})) return get_log();
        if (m == "GET" && is({"series"})) return get_series();
        if (m == "GET" && is({"alarms", "stream"})) return get_alarms();
        if (m == "GET" && is({"config"})) return get_config();
        fail(404, "UnknownEntity", "no route for " + m + " " + req.path);
    }

private:
    std::optional<std::string> param(const std::string& name) const {
        const auto it = req_->params.find(name);
        if (it == req_->params.end() || it->second.empty()) return std::nullopt;
        return it->second;
    }

    std::string require(const std::string& name) const {
        auto v = param(name);
        if (!v) fail(400, "Validation", "missing parameter '" + name + "'");
        return *v;
    }

    PlotType plot_type_param(const std::string& value) const {
        std::int64_t id = 0;
        const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), id);
        if (ec == std::errc() && p == value.data() + value.size()) return store_.plot_type(PlotTypeId{id});
        auto pt = store_.find_plot_type(value);
        if (!pt) throw Error(ErrorCode::UnknownPlotType, "unknown plot type '" + value + "'");
        return *pt;
    }

    std::optional<PlotType> optional_plot_type() const {
        if (auto v = param("plot_type")) return plot_type_param(*v);
        return std::nullopt;
    }

    ModelRecord model_param(const std::string& value) const { return store_.model(ModelId{parse_int(value, "model id")}); }

    std::optional<TimeWindow> range_params() const {
        const auto from = param("from"), to = param("to");
        if (!from && !to) return std::nullopt;
        TimeWindow w{from ? parse_int(*from, "from") : std::numeric_limits<UtcMillis>::min(),
                     to ? parse_int(*to, "to") : std::numeric_limits<UtcMillis>::max()};
        if (!w.valid()) throw Error(ErrorCode::InvalidWindow, "from is after to");
        return w;
    }

    TimeWindow trailing_window() const {
        UtcMillis length = config_.default_window_ms;
        if (auto w = param("window")) length = parse_int(*w, "window");
        if (length <= 0) throw Error(ErrorCode::InvalidWindow, "window must be positive");
        const UtcMillis now = config_.clock();
        return {now - length, now};
    }

    std::string user() const {
        auto u = req_->header(kUserHeader);
        if (!u || u->empty()) throw Error(ErrorCode::PermissionDenied, "missing user header");
        return *u;
    }

    json body() const {
        try {
            return json::parse(req_->body);
        } catch (const json::exception& e) {
            fail(400, "Validation", std::string("malformed JSON body: ") + e.what());
        }
    }

    ApiResponse get_config() {
        return json_response({{"poll_interval_ms", config_.poll_interval_ms},
                              {"retention_ms", store_.retention_ms()},
                              {"default_window_ms", config_.default_window_ms}});
    }

    ApiResponse get_plot_types() {
        json out = json::array();
        for (const auto& pt : store_.plot_types()) out.push_back(to_json(pt));
        return json_response(out);
    }

    ApiResponse get_labels() {
        const PlotType pt = plot_type_param(require("plot_type"));
        json out = json::array();
        for (const auto& l : pt.labels) out.push_back(to_json(l));
        return json_response(out);
    }

    ApiResponse post_label() {
        const json b = body();
        if (!b.is_object() || !b.contains("image_id") || !b.contains("label_id"))
            fail(400, "Validation", "body needs image_id and label_id");
        std::string who;
        if (auto h = req_->header(kUserHeader); h && !h->empty()) who = *h;
        else if (b.contains("user") && b["user"].is_string()) who = b["user"].get<std::string>();
        if (who.empty()) throw Error(ErrorCode::PermissionDenied, "missing user");
        if (b.contains("user") && b["user"].is_string() && b["user"].get<std::string>() != who)
            throw Error(ErrorCode::PermissionDenied, "body user differs from header user");
        if (!b["image_id"].is_number_integer() || !b["label_id"].is_number_integer())
            fail(400, "Validation", "image_id and label_id must be integers");
        const auto a = store_.assign_label(ImageId{b["image_id"].get<std::int64_t>()},
                                           LabelId{b["label_id"].get<std::int64_t>()}, who, config_.clock());
        return json_response(to_json(a));
    }

    ApiResponse get_unlabeled() {
        const PlotType pt = plot_type_param(require("plot_type"));
        int limit = 50;
        if (auto l = param("limit")) limit = static_cast<int>(parse_int(*l, "limit"));
        json out = json::array();
        for (const auto& r : store_.query_unlabeled(pt.id, limit, range_params())) {
            json j = to_json(r);
            const auto reason = store_.collection_reason(r.id);
            j["collect_reason"] = reason ? std::string(to_string(*reason)) : "None";
            out.push_back(j);
        }
        return json_response(out);
    }

    ApiResponse get_labeled() {
        const PlotType pt = plot_type_param(require("plot_type"));
        std::optional<LabelId> label;
        if (auto l = param("label")) {
            std::int64_t id = 0;
            const auto [p, ec] = std::from_chars(l->data(), l->data() + l->size(), id);
            if (ec == std::errc() && p == l->data() + l->size()) label = LabelId{id};
            else if (const LabelDef* def = pt.find_label(*l)) label = def->id;
            else throw Error(ErrorCode::UnknownLabel, "unknown label '" + *l + "'");
            if (!pt.find_label(*label)) throw Error(ErrorCode::UnknownLabel, "label not in plot type");
        }
        json out = json::array();
        for (const auto& li : store_.query_labeled(pt.id, label, range_params())) {
            json j = to_json(li.image);
            j["label"] = to_json(li.assignment);
            out.push_back(j);
        }
        return json_response(out);
    }

    json model_json(const ModelRecord& m) const {
        json order = json::array();
        for (auto l : m.label_order) order.push_back(l.value);
        json thresholds = json::array();
        for (const auto& t : store_.thresholds(m.id))
            thresholds.push_back({{"label_id", t.label.value}, {"threshold", t.threshold}});
        return {{"id", m.id.value},
                {"plot_type", m.plot_type.value},
                {"artifact_path", m.artifact_path},
                {"label_order", order},
                {"active", m.active},
                {"training_set", m.training_set ? json(m.training_set->value) : json(nullptr)},
                {"sampling_method", m.sampling_method},
                {"created_at", m.created_at},
                {"input_width", m.input_width},
                {"input_height", m.input_height},
                {"channels", m.channels},
                {"collect_percentage", m.collect_percentage},
                {"thresholds", thresholds}};
    }

    ApiResponse get_models() {
        const PlotType pt = plot_type_param(require("plot_type"));
        json out = json::array();
        for (const auto& m : store_.models(pt.id)) out.push_back(model_json(m));
        return json_response(out);
    }

    void require_editor(PlotTypeId plot_type) const {
        detail::check_labeler(store_.plot_type(plot_type), user());
    }

    ApiResponse activate(const ModelRecord& m) {
        require_editor(m.plot_type);
        const auto previous = store_.set_active_model(m.id);
        return json_response({{"active", m.id.value}, {"previous", previous ? json(previous->value) : json(nullptr)}});
    }

    ApiResponse get_thresholds(const ModelRecord& m) { return json_response(model_json(m)["thresholds"]); }

    ApiResponse put_thresholds(const ModelRecord& m) {
        require_editor(m.plot_type);
        const json b = body();
        const json& rows = b.is_object() && b.contains("thresholds") ? b["thresholds"] : b;
        if (!rows.is_array() || rows.empty()) fail(400, "Validation", "expected a non-empty thresholds array");
        std::vector<ThresholdConfig> out;
        for (const auto& r : rows) {
            if (!r.is_object() || !r.contains("label_id") || !r.contains("threshold") ||
                !r["label_id"].is_number_integer() || !r["threshold"].is_number())
                fail(400, "Validation", "each row needs integer label_id and numeric threshold");
            const double t = r["threshold"].get<double>();
            if (!(t >= 0.0 && t <= 1.0)) fail(400, "Validation", "threshold must be in [0,1]");
            out.push_back({m.id, LabelId{r["label_id"].get<std::int64_t>()}, t});
        }
        store_.set_thresholds(m.id, out);
        return get_thresholds(m);
    }

    ApiResponse get_ecm(const ModelRecord& m) {
        std::vector<ImageId> ids;
        if (m.training_set) {
            for (const auto& member : store_.training_set(*m.training_set).members) ids.push_back(member.image);
        } else {
            for (const auto& li : store_.query_labeled(m.plot_type, std::nullopt, std::nullopt)) ids.push_back(li.image.id);
        }
        const auto items = evaluation_set_from_labels(store_, ids);
        ScoringContext ctx;
        ctx.image_root = config_.image_root;
        ctx.model_root = config_.model_root;
        const auto ecm = build_ecm(store_, m.id, items, ctx);
        json labels = json::array();
        for (auto l : ecm.labels) labels.push_back(l.value);
        json cells = json::array();
        for (const auto& row : ecm.cells) {
            json r = json::array();
            for (const auto& c : row) r.push_back({{"count", c.count}, {"weights", c.weight_samples}});
            cells.push_back(r);
        }
        return json_response({{"model", m.id.value}, {"labels", labels}, {"total", ecm.total()}, {"cells", cells}});
    }

    ApiResponse get_live() {
        const auto pt = optional_plot_type();
        json out = json::array();
        for (const auto& e : store_.live_entries(pt ? std::optional(pt->id) : std::nullopt, config_.clock())) {
            const LabelDef label = store_.label(e.classification);
            out.push_back({{"inference_id", e.inference_id.value},
                           {"image_id", e.image.value},
                           {"plot_type", e.plot_type.value},
                           {"image_path", e.image_path},
                           {"classification", e.classification.value},
                           {"label", label.name},
                           {"severity", to_string(label.severity)},
                           {"confirmed", e.confirmed},
                           {"inferred_at", e.inferred_at},
                           {"heatmap", e.gradcam_path.has_value()},
                           {"image_url", "/images/" + std::to_string(e.image.value)},
                           {"heatmap_url", e.gradcam_path ? json("/heatmaps/" + std::to_string(e.inference_id.value))
                                                          : json(nullptr)}});
        }
        return json_response(out);
    }

    ApiResponse image_bytes(const fs::path& path) {
        if (param("format") == std::optional<std::string>("png"))
            try {
                const auto png = encode_png(read_image(path));
                return {200, "image/png", std::string(png.begin(), png.end())};
            } catch (const Error& e) {
                if (e.code() == ErrorCode::Io) fail(404, "UnknownEntity", "file not found: " + path.filename().string());
                throw;
            }
        return {200, content_type_for(path), read_bytes(path)};
    }

    ApiResponse get_image(ImageId id) {
        const ImageRecord rec = store_.image(id);
        return image_bytes(config_.image_root / rec.storage_path);
    }

    ApiResponse get_heatmap(InferenceId id) {
        if (!store_.find_inference(id)) throw Error(ErrorCode::UnknownImage, "no inference " + std::to_string(id.value));
        const auto path = heatmap_path(config_.heatmap_dir, id);
        if (!fs::exists(path)) fail(404, "UnknownEntity", "no heatmap for inference " + std::to_string(id.value));
        return image_bytes(path);
    }

    ApiResponse get_status() {
        const auto pt = optional_plot_type();
        const auto m = status_metrics(store_, trailing_window(), pt ? std::optional(pt->id) : std::nullopt);
        json hist = json::array();
        for (const auto& h : m.histograms) hist.push_back({{"stage", h.stage}, {"counts", h.counts}, {"total", h.total()}});
        json runs = json::object();
        for (const auto& [stage, series] : m.per_run) {
            json s = json::array();
            for (const auto& r : series)
                s.push_back({{"run_number", r.run_number}, {"mean_seconds", r.mean_seconds}, {"samples", r.samples}});
            runs[stage] = s;
        }
        return json_response({{"from", m.window.from},
                              {"to", m.window.to},
                              {"bucket_edges", histogram_edges()},
                              {"histograms", hist},
                              {"per_run", runs}});
    }

    ApiResponse get_log() {
        const auto pt = optional_plot_type();
        const auto d = build_log_digest(store_, trailing_window(), pt ? std::optional(pt->id) : std::nullopt,
                                        config_.heatmap_dir);
        json entries = json::array();
        for (const auto& e : d.entries)
            entries.push_back({{"inference_id", e.inference.value},
                               {"image_id", e.image.value},
                               {"plot_type", e.plot_type.value},
                               {"classification", e.classification.value},
                               {"label", e.label_name},
                               {"severity", to_string(e.severity)},
                               {"confirmed", e.confirmed},
                               {"inferred_at", e.inferred_at},
                               {"heatmap_url", e.heatmap ? json("/heatmaps/" + std::to_string(e.inference.value))
                                                         : json(nullptr)}});
        return json_response({{"from", d.window.from}, {"to", d.window.to}, {"entries", entries}});
    }

    ApiResponse get_series() {
        const PlotType pt = plot_type_param(require("plot_type"));
        TimeWindow w = trailing_window();
        if (auto r = range_params()) w = *r;
        json out = json::object();
        for (const auto& [label, points] : store_.query_weight_series(pt.id, w)) {
            json s = json::array();
            for (const auto& p : points) s.push_back(json::array({p.time, p.weight}));
            out[label] = s;
        }
        return json_response({{"plot_type", pt.id.value}, {"from", w.from}, {"to", w.to}, {"series", out}});
    }

    ApiResponse get_alarms() {
        std::uint64_t after = 0;
        if (auto a = param("after")) after = static_cast<std::uint64_t>(parse_int(*a, "after"));
        auto wait = config_.alarm_wait;
        if (auto t = param("timeout_ms"))
            wait = std::min(wait, std::chrono::milliseconds(std::max<std::int64_t>(0, parse_int(*t, "timeout_ms"))));
        const auto events = wait.count() > 0 ? alarms_.wait_after(after, wait) : alarms_.events_after(after);
        json out = json::array();
        for (const auto& e : events) out.push_back(to_json(e));
        return json_response({{"last_sequence", events.empty() ? after : events.back().sequence}, {"events", out}});
    }

    Store& store_;
    AlarmBus& alarms_;
    const ApiConfig& config_;
    const ApiRequest* req_ = nullptr;
};

struct ApiService::Server {
    httplib::Server http;
    std::atomic<bool> stopping{false};
};

ApiService::ApiService(Store& store, AlarmBus& alarms, ApiConfig config)
    : store_(store), alarms_(alarms), config_(std::move(config)), server_(std::make_unique<Server>()) {
    auto adapt = [this](const httplib::Request& req, httplib::Response& res) {
        ApiRequest r;
        r.method = req.method;
        r.path = req.path;
        for (const auto& [k, v] : req.params) r.params.emplace(k, v);
        for (const auto& [k, v] : req.headers) r.headers.emplace(k, v);
        r.body = req.body;

        const auto accept = r.header("Accept");
        if (r.method == "GET" && r.path == "/alarms/stream" && accept &&
            accept->find("text/event-stream") != std::string::npos) {
            std::uint64_t after = 0;
            if (auto it = r.params.find("after"); it != r.params.end()) after = std::strtoull(it->second.c_str(), nullptr, 10);
            auto last = std::make_shared<std::uint64_t>(after);
            res.set_chunked_content_provider("text/event-stream", [this, last](std::size_t, httplib::DataSink& sink) {
                if (server_->stopping) return false;
                for (const auto& e : alarms_.wait_after(*last, std::chrono::milliseconds(1000))) {
                    const std::string frame = "id: " + std::to_string(e.sequence) + "\nevent: alarm\ndata: " +
                                              to_json(e).dump() + "\n\n";
                    if (!sink.write(frame.data(), frame.size())) return false;
                    *last = e.sequence;
                }
                const std::string keepalive = ": keepalive\n\n";
                return sink.write(keepalive.data(), keepalive.size());
            });
            return;
        }

        const ApiResponse out = handle(r);
        res.status = out.status;
        res.set_content(out.body, out.content_type);
    };
    server_->http.Get(".*", adapt);
    server_->http.Post(".*", adapt);
    server_->http.Put(".*", adapt);
}

ApiService::~ApiService() { stop(); }

ApiResponse ApiService::handle(const ApiRequest& request) {
    try {
        ApiHandler h(store_, alarms_, config_);
        return h.handle(request);
    } catch (const HttpError& e) {
        return error_response(e);
    } catch (const Error& e) {
        const auto mapped = map_error(e);
        if (mapped.status >= 500) spdlog::error("api: {} {}: {}", request.method, request.path, e.what());
        return error_response(mapped);
    } catch (const std::exception& e) {
        spdlog::error("api: {} {}: {}", request.method, request.path, e.what());
        return error_response({500, "Persistence", e.what()});
    }
}

bool ApiService::listen() { return server_->http.listen(config_.host, config_.port); }

int ApiService::bind_any_port() { return server_->http.bind_to_any_port(config_.host); }

bool ApiService::listen_after_bind() { return server_->http.listen_after_bind(); }

void ApiService::stop() {
    server_->stopping = true;
    server_->http.stop();
}

} // namespace hydra
