#include "hydra/error.hpp"
#include "hydra/store.hpp"

#include <json.hpp>
#include <sqlite3.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <mutex>
#include <sstream>

namespace hydra {
namespace {

static_assert(std::endian::native == std::endian::little, "weight blobs are stored little-endian");

constexpr const char* kSchema = R"sql(
PRAGMA foreign_keys = ON;
CREATE TABLE IF NOT EXISTS plot_types (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL UNIQUE,
    input_width INTEGER NOT NULL,
    input_height INTEGER NOT NULL,
    channels INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS plot_type_labelers (
    plot_type_id INTEGER NOT NULL REFERENCES plot_types(id),
    user TEXT NOT NULL,
    PRIMARY KEY (plot_type_id, user)
);
CREATE TABLE IF NOT EXISTS labels (
    id INTEGER PRIMARY KEY,
    plot_type_id INTEGER NOT NULL REFERENCES plot_types(id),
    name TEXT NOT NULL,
    color TEXT NOT NULL,
    severity TEXT NOT NULL,
    UNIQUE (plot_type_id, name)
);
CREATE TABLE IF NOT EXISTS images (
    id INTEGER PRIMARY KEY,
    plot_type_id INTEGER NOT NULL REFERENCES plot_types(id),
    run_number INTEGER NOT NULL,
    sequence INTEGER NOT NULL,
    capture_time INTEGER NOT NULL,
    storage_path TEXT NOT NULL,
    width INTEGER NOT NULL,
    height INTEGER NOT NULL,
    UNIQUE (plot_type_id, run_number, sequence)
);
CREATE TABLE IF NOT EXISTS collections (
    image_id INTEGER PRIMARY KEY REFERENCES images(id),
    reason TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS label_assignments (
    id INTEGER PRIMARY KEY,
    image_id INTEGER NOT NULL REFERENCES images(id),
    label_id INTEGER NOT NULL REFERENCES labels(id),
    labeler TEXT NOT NULL,
    assigned_at INTEGER NOT NULL,
    superseded INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS label_assignments_current ON label_assignments(image_id, superseded);
CREATE TABLE IF NOT EXISTS training_sets (
    id INTEGER PRIMARY KEY,
    plot_type_id INTEGER NOT NULL REFERENCES plot_types(id),
    sampling_method TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS training_members (
    training_set_id INTEGER NOT NULL REFERENCES training_sets(id),
    position INTEGER NOT NULL,
    image_id INTEGER NOT NULL REFERENCES images(id),
    label_id INTEGER NOT NULL REFERENCES labels(id),
    PRIMARY KEY (training_set_id, position)
);
CREATE TABLE IF NOT EXISTS models (
    id INTEGER PRIMARY KEY,
    plot_type_id INTEGER NOT NULL REFERENCES plot_types(id),
    artifact_path TEXT NOT NULL,
    label_order TEXT NOT NULL,
    active INTEGER NOT NULL,
    training_set_id INTEGER REFERENCES training_sets(id),
    sampling_method TEXT NOT NULL,
    created_at INTEGER NOT NULL,
    input_width INTEGER NOT NULL,
    input_height INTEGER NOT NULL,
    channels INTEGER NOT NULL,
    collect_percentage REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS thresholds (
    model_id INTEGER NOT NULL REFERENCES models(id),
    label_id INTEGER NOT NULL REFERENCES labels(id),
    threshold REAL NOT NULL,
    PRIMARY KEY (model_id, label_id)
);
CREATE TABLE IF NOT EXISTS run_history (
    inference_id INTEGER PRIMARY KEY,
    image_id INTEGER NOT NULL REFERENCES images(id),
    model_id INTEGER NOT NULL REFERENCES models(id),
    output_weights BLOB NOT NULL,
    classification INTEGER NOT NULL REFERENCES labels(id),
    confirmed INTEGER NOT NULL,
    collected INTEGER NOT NULL,
    collect_reason TEXT NOT NULL,
    stage_timings TEXT NOT NULL,
    inferred_at INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS run_history_time ON run_history(inferred_at);
CREATE TABLE IF NOT EXISTS run_time (
    inference_id INTEGER PRIMARY KEY,
    image_id INTEGER NOT NULL,
    plot_type_id INTEGER NOT NULL,
    image_path TEXT NOT NULL,
    gradcam_path TEXT,
    classification INTEGER NOT NULL,
    confirmed INTEGER NOT NULL,
    inferred_at INTEGER NOT NULL
);
)sql";

#define HYDRA_HISTORY_SELECT                                                                           \
    "SELECT h.inference_id, h.image_id, h.model_id, h.output_weights, h.classification, h.confirmed, " \
    "h.collected, h.collect_reason, h.stage_timings, h.inferred_at FROM run_history h"

class Database {
public:
    explicit Database(const std::filesystem::path& path) {
        const int rc = sqlite3_open_v2(path.string().c_str(), &db_,
                                       SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX, nullptr);
        if (rc != SQLITE_OK) {
            std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
            sqlite3_close(db_);
            throw Error(ErrorCode::Persistence, "cannot open " + path.string() + ": " + msg);
        }
        sqlite3_busy_timeout(db_, 5000);
    }
    ~Database() { sqlite3_close(db_); }
    Database(const Database&) = delete;
    Database& operator=(const Database&) = delete;

    void exec(const char* sql) {
        char* err = nullptr;
        if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
            std::string msg = err ? err : "unknown";
            sqlite3_free(err);
            throw Error(ErrorCode::Persistence, msg);
        }
    }

    sqlite3* handle() const { return db_; }
    std::int64_t last_rowid() const { return sqlite3_last_insert_rowid(db_); }

private:
    sqlite3* db_ = nullptr;
};

class Statement {
public:
    Statement(const Database& db, const char* sql) : db_(db.handle()) {
        if (sqlite3_prepare_v2(db_, sql, -1, &stmt_, nullptr) != SQLITE_OK)
            throw Error(ErrorCode::Persistence, std::string("prepare: ") + sqlite3_errmsg(db_));
    }
    ~Statement() { sqlite3_finalize(stmt_); }
    Statement(const Statement&) = delete;
    Statement& operator=(const Statement&) = delete;

    Statement& bind(int idx, std::int64_t v) {
        check(sqlite3_bind_int64(stmt_, idx, v));
        return *this;
    }
    Statement& bind(int idx, int v) { return bind(idx, static_cast<std::int64_t>(v)); }
    Statement& bind(int idx, bool v) { return bind(idx, static_cast<std::int64_t>(v ? 1 : 0)); }
    Statement& bind(int idx, double v) {
        check(sqlite3_bind_double(stmt_, idx, v));
        return *this;
    }
    Statement& bind(int idx, std::string_view v) {
        check(sqlite3_bind_text(stmt_, idx, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
        return *this;
    }
    Statement& bind(int idx, const std::string& v) { return bind(idx, std::string_view(v)); }
    Statement& bind(int idx, const char* v) { return bind(idx, std::string_view(v)); }
    Statement& bind_blob(int idx, const void* data, std::size_t n) {
        check(sqlite3_bind_blob(stmt_, idx, data, static_cast<int>(n), SQLITE_TRANSIENT));
        return *this;
    }
    Statement& bind_null(int idx) {
        check(sqlite3_bind_null(stmt_, idx));
        return *this;
    }

    /// Returns true while a row is available.
    bool step() {
        const int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        last_error_ = rc;
        throw Error(ErrorCode::Persistence, sqlite3_errmsg(db_));
    }

    /// Runs a statement that returns no rows; reports constraint failures.
    int run() {
        const int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_DONE || rc == SQLITE_ROW) return SQLITE_OK;
        return sqlite3_extended_errcode(db_);
    }

    std::int64_t i64(int col) const { return sqlite3_column_int64(stmt_, col); }
    int i32(int col) const { return sqlite3_column_int(stmt_, col); }
    double f64(int col) const { return sqlite3_column_double(stmt_, col); }
    bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }
    std::string text(int col) const {
        const auto* p = sqlite3_column_text(stmt_, col);
        return p ? std::string(reinterpret_cast<const char*>(p), sqlite3_column_bytes(stmt_, col)) : std::string();
    }
    std::vector<double> f64_blob(int col) const {
        const auto* p = sqlite3_column_blob(stmt_, col);
        const int n = sqlite3_column_bytes(stmt_, col);
        std::vector<double> out(static_cast<std::size_t>(n) / sizeof(double));
        if (p && n > 0) std::memcpy(out.data(), p, out.size() * sizeof(double));
        return out;
    }

private:
    void check(int rc) const {
        if (rc != SQLITE_OK) throw Error(ErrorCode::Persistence, std::string("bind: ") + sqlite3_errmsg(db_));
    }

    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
    int last_error_ = 0;
};

// Scoped BEGIN IMMEDIATE / COMMIT; rolls back unless committed.
class Transaction {
public:
    explicit Transaction(Database& db) : db_(db) { db_.exec("BEGIN IMMEDIATE"); }
    ~Transaction() {
        if (!done_) {
            try {
                db_.exec("ROLLBACK");
            } catch (...) {
            }
        }
    }
    void commit() {
        db_.exec("COMMIT");
        done_ = true;
    }

private:
    Database& db_;
    bool done_ = false;
};

std::string encode_ids(const std::vector<LabelId>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(ids[i].value);
    }
    return out;
}

std::vector<LabelId> decode_ids(const std::string& s) {
    std::vector<LabelId> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.emplace_back(std::stoll(item));
    return out;
}

std::string encode_timings(const StageTimings& timings) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& t : timings) j.push_back({t.stage, t.seconds});
    return j.dump();
}

StageTimings decode_timings(const std::string& s) {
    StageTimings out;
    for (const auto& item : nlohmann::json::parse(s))
        out.push_back({item.at(0).get<std::string>(), item.at(1).get<double>()});
    return out;
}

bool is_constraint(int rc) { return (rc & 0xff) == SQLITE_CONSTRAINT; }

class SqliteStore final : public Store {
public:
    SqliteStore(const std::filesystem::path& path, UtcMillis retention) : db_(path), retention_(retention) {
        db_.exec(kSchema);
        try {
            db_.exec("PRAGMA journal_mode = WAL");
        } catch (const Error&) {
            // in-memory databases keep their default journal
        }
    }

    PlotType register_plot_type(const PlotTypeSpec& spec) override {
        validate_plot_type_spec(spec);
        std::lock_guard lock(mu_);
        Transaction tx(db_);
        {
            Statement st(db_, "INSERT INTO plot_types(name, input_width, input_height, channels) VALUES (?,?,?,?)");
            st.bind(1, spec.name).bind(2, spec.input_width).bind(3, spec.input_height).bind(4, spec.channels);
            const int rc = st.run();
            if (is_constraint(rc)) throw Error(ErrorCode::DuplicateName, "plot type '" + spec.name + "' exists");
            if (rc != SQLITE_OK) throw Error(ErrorCode::Persistence, sqlite3_errmsg(db_.handle()));
        }
        const PlotTypeId id{db_.last_rowid()};
        for (const auto& l : spec.labels) {
            Statement st(db_, "INSERT INTO labels(plot_type_id, name, color, severity) VALUES (?,?,?,?)");
            st.bind(1, id.value).bind(2, l.name).bind(3, to_hex(l.color)).bind(4, to_string(l.severity));
            expect_ok(st.run());
        }
        for (const auto& user : spec.allowed_labelers) insert_labeler(id, user);
        tx.commit();
        return load_plot_type(id);
    }

    void grant_labeler(PlotTypeId id, const std::string& user) override {
        std::lock_guard lock(mu_);
        load_plot_type(id);
        insert_labeler(id, user);
    }

    std::vector<PlotType> plot_types() const override {
        std::lock_guard lock(mu_);
        std::vector<PlotType> out;
        Statement st(db_, "SELECT id FROM plot_types ORDER BY id");
        std::vector<PlotTypeId> ids;
        while (st.step()) ids.emplace_back(st.i64(0));
        for (auto id : ids) out.push_back(load_plot_type(id));
        return out;
    }

    PlotType plot_type(PlotTypeId id) const override {
        std::lock_guard lock(mu_);
        return load_plot_type(id);
    }

    std::optional<PlotType> find_plot_type(std::string_view name) const override {
        std::lock_guard lock(mu_);
        Statement st(db_, "SELECT id FROM plot_types WHERE name = ?");
        st.bind(1, name);
        if (!st.step()) return std::nullopt;
        return load_plot_type(PlotTypeId{st.i64(0)});
    }

    LabelDef label(LabelId id) const override {
        std::lock_guard lock(mu_);
        return load_label(id);
    }

    ImageRecord add_image(const ImageRecord& record) override {
        std::lock_guard lock(mu_);
        load_plot_type(record.plot_type);
        Statement st(db_,
                     "INSERT INTO images(plot_type_id, run_number, sequence, capture_time, storage_path, width, height) "
                     "VALUES (?,?,?,?,?,?,?)");
        st.bind(1, record.plot_type.value)
            .bind(2, record.run_number)
            .bind(3, record.sequence)
            .bind(4, record.capture_time)
            .bind(5, record.storage_path)
            .bind(6, record.width)
            .bind(7, record.height);
        const int rc = st.run();
        if (is_constraint(rc)) throw Error(ErrorCode::DuplicateImage, "image key already registered");
        expect_ok(rc);
        ImageRecord stored = record;
        stored.id = ImageId{db_.last_rowid()};
        return stored;
    }

    ImageRecord image(ImageId id) const override {
        std::lock_guard lock(mu_);
        return load_image(id);
    }

    std::optional<ImageRecord> find_image(PlotTypeId plot_type, std::int64_t run,
                                          std::int64_t sequence) const override {
        std::lock_guard lock(mu_);
        Statement st(db_, "SELECT id FROM images WHERE plot_type_id = ? AND run_number = ? AND sequence = ?");
        st.bind(1, plot_type.value).bind(2, run).bind(3, sequence);
        if (!st.step()) return std::nullopt;
        return load_image(ImageId{st.i64(0)});
    }

    void mark_collected(ImageId id, CollectReason reason) override {
        std::lock_guard lock(mu_);
        load_image(id);
        Statement st(db_, "INSERT OR IGNORE INTO collections(image_id, reason) VALUES (?,?)");
        st.bind(1, id.value).bind(2, to_string(reason));
        expect_ok(st.run());
    }

    std::optional<CollectReason> collection_reason(ImageId id) const override {
        std::lock_guard lock(mu_);
        Statement st(db_, "SELECT reason FROM collections WHERE image_id = ?");
        st.bind(1, id.value);
        if (!st.step()) return std::nullopt;
        return parse_collect_reason(st.text(0));
    }

    LabelAssignment assign_label(ImageId image_id, LabelId label_id, const std::string& labeler,
                                 UtcMillis at) override {
        std::lock_guard lock(mu_);
        const ImageRecord img = load_image(image_id);
        detail::check_labeler(load_plot_type(img.plot_type), labeler);
        const LabelDef def = load_label(label_id);
        if (def.plot_type != img.plot_type)
            throw Error(ErrorCode::LabelPlotTypeMismatch, "label belongs to another plot type");

        Transaction tx(db_);
        {
            Statement st(db_, "UPDATE label_assignments SET superseded = 1 WHERE image_id = ?");
            st.bind(1, image_id.value);
            expect_ok(st.run());
        }
        Statement st(db_,
                     "INSERT INTO label_assignments(image_id, label_id, labeler, assigned_at, superseded) "
                     "VALUES (?,?,?,?,0)");
        st.bind(1, image_id.value).bind(2, label_id.value).bind(3, labeler).bind(4, at);
        expect_ok(st.run());
        LabelAssignment a{AssignmentId{db_.last_rowid()}, image_id, label_id, labeler, at, false};
        tx.commit();
        return a;
    }

    std::optional<LabelAssignment> current_label(ImageId id) const override {
        std::lock_guard lock(mu_);
        return current_label_locked(id);
    }

    std::vector<LabelAssignment> label_history(ImageId id) const override {
        std::lock_guard lock(mu_);
        Statement st(db_,
                     "SELECT id, image_id, label_id, labeler, assigned_at, superseded FROM label_assignments "
                     "WHERE image_id = ? ORDER BY id");
        st.bind(1, id.value);
        std::vector<LabelAssignment> out;
        while (st.step()) out.push_back(read_assignment(st, 0));
        return out;
    }

    std::vector<ImageRecord> query_unlabeled(PlotTypeId plot_type, int limit,
                                             std::optional<TimeWindow> window) const override {
        if (limit < 1) throw Error(ErrorCode::InvalidLimit, "limit must be at least 1");
        std::lock_guard lock(mu_);
        load_plot_type(plot_type);
        Statement st(db_,
                     "SELECT i.id, i.plot_type_id, i.run_number, i.sequence, i.capture_time, i.storage_path, "
                     "i.width, i.height FROM images i JOIN collections c ON c.image_id = i.id "
                     "WHERE i.plot_type_id = ?1 AND NOT EXISTS (SELECT 1 FROM label_assignments a "
                     "WHERE a.image_id = i.id AND a.superseded = 0) "
                     "AND (?2 = 0 OR i.capture_time BETWEEN ?3 AND ?4) "
                     "ORDER BY i.capture_time, i.id LIMIT ?5");
        st.bind(1, plot_type.value)
            .bind(2, window.has_value())
            .bind(3, window ? window->from : 0)
            .bind(4, window ? window->to : 0)
            .bind(5, limit);
        std::vector<ImageRecord> out;
        while (st.step()) out.push_back(read_image(st, 0));
        return out;
    }

    std::vector<LabeledImage> query_labeled(PlotTypeId plot_type, std::optional<LabelId> label,
                                            std::optional<TimeWindow> window) const override {
        std::lock_guard lock(mu_);
        load_plot_type(plot_type);
        Statement st(db_,
                     "SELECT i.id, i.plot_type_id, i.run_number, i.sequence, i.capture_time, i.storage_path, "
                     "i.width, i.height, a.id, a.image_id, a.label_id, a.labeler, a.assigned_at, a.superseded "
                     "FROM images i JOIN label_assignments a ON a.image_id = i.id AND a.superseded = 0 "
                     "WHERE i.plot_type_id = ?1 AND (?2 = 0 OR a.label_id = ?3) "
                     "AND (?4 = 0 OR i.capture_time BETWEEN ?5 AND ?6) "
                     "ORDER BY i.capture_time DESC, i.id DESC");
        st.bind(1, plot_type.value)
            .bind(2, label.has_value())
            .bind(3, label ? label->value : 0)
            .bind(4, window.has_value())
            .bind(5, window ? window->from : 0)
            .bind(6, window ? window->to : 0);
        std::vector<LabeledImage> out;
        while (st.step()) out.push_back({read_image(st, 0), read_assignment(st, 8)});
        return out;
    }

    ModelRecord add_model(const ModelRecord& record) override {
        std::lock_guard lock(mu_);
        detail::check_model_record(record, load_plot_type(record.plot_type));
        if (record.training_set) load_training_set(*record.training_set);
        Transaction tx(db_);
        Statement st(db_,
                     "INSERT INTO models(plot_type_id, artifact_path, label_order, active, training_set_id, "
                     "sampling_method, created_at, input_width, input_height, channels, collect_percentage) "
                     "VALUES (?,?,?,0,?,?,?,?,?,?,?)");
        st.bind(1, record.plot_type.value).bind(2, record.artifact_path).bind(3, encode_ids(record.label_order));
        if (record.training_set)
            st.bind(4, record.training_set->value);
        else
            st.bind_null(4);
        st.bind(5, record.sampling_method)
            .bind(6, record.created_at)
            .bind(7, record.input_width)
            .bind(8, record.input_height)
            .bind(9, record.channels)
            .bind(10, record.collect_percentage);
        expect_ok(st.run());
        ModelRecord stored = record;
        stored.id = ModelId{db_.last_rowid()};
        stored.active = false;
        for (LabelId l : stored.label_order) {
            Statement t(db_, "INSERT INTO thresholds(model_id, label_id, threshold) VALUES (?,?,0.0)");
            t.bind(1, stored.id.value).bind(2, l.value);
            expect_ok(t.run());
        }
        tx.commit();
        return stored;
    }

    ModelRecord model(ModelId id) const override {
        std::lock_guard lock(mu_);
        return load_model(id);
    }

    std::vector<ModelRecord> models(PlotTypeId plot_type) const override {
        std::lock_guard lock(mu_);
        load_plot_type(plot_type);
        Statement st(db_, "SELECT id FROM models WHERE plot_type_id = ? ORDER BY id");
        st.bind(1, plot_type.value);
        std::vector<ModelId> ids;
        while (st.step()) ids.emplace_back(st.i64(0));
        std::vector<ModelRecord> out;
        for (auto id : ids) out.push_back(load_model(id));
        return out;
    }

    std::optional<ModelRecord> active_model(PlotTypeId plot_type) const override {
        std::lock_guard lock(mu_);
        Statement st(db_, "SELECT id FROM models WHERE plot_type_id = ? AND active = 1");
        st.bind(1, plot_type.value);
        if (!st.step()) return std::nullopt;
        return load_model(ModelId{st.i64(0)});
    }

    std::optional<ModelId> set_active_model(ModelId id) override {
        std::lock_guard lock(mu_);
        const ModelRecord target = load_model(id);
        Transaction tx(db_);
        std::optional<ModelId> previous;
        {
            Statement st(db_, "SELECT id FROM models WHERE plot_type_id = ? AND active = 1");
            st.bind(1, target.plot_type.value);
            if (st.step()) previous = ModelId{st.i64(0)};
        }
        {
            Statement st(db_, "UPDATE models SET active = (id = ?) WHERE plot_type_id = ?");
            st.bind(1, id.value).bind(2, target.plot_type.value);
            expect_ok(st.run());
        }
        tx.commit();
        return previous;
    }

    void set_thresholds(ModelId id, const std::vector<ThresholdConfig>& rows) override {
        std::lock_guard lock(mu_);
        detail::check_threshold_rows(rows, load_model(id));
        Transaction tx(db_);
        for (const auto& row : rows) {
            Statement st(db_, "UPDATE thresholds SET threshold = ? WHERE model_id = ? AND label_id = ?");
            st.bind(1, row.threshold).bind(2, id.value).bind(3, row.label.value);
            expect_ok(st.run());
        }
        tx.commit();
    }

    std::vector<ThresholdConfig> thresholds(ModelId id) const override {
        std::lock_guard lock(mu_);
        const ModelRecord m = load_model(id);
        std::vector<ThresholdConfig> out;
        for (LabelId l : m.label_order) {
            Statement st(db_, "SELECT threshold FROM thresholds WHERE model_id = ? AND label_id = ?");
            st.bind(1, id.value).bind(2, l.value);
            if (!st.step()) throw Error(ErrorCode::MissingThreshold, "no threshold row");
            out.push_back({id, l, st.f64(0)});
        }
        return out;
    }

    void set_collect_percentage(ModelId id, double fraction) override {
        if (!(fraction >= 0.0 && fraction <= 1.0))
            throw Error(ErrorCode::Validation, "collect percentage must be in [0,1]");
        std::lock_guard lock(mu_);
        load_model(id);
        Statement st(db_, "UPDATE models SET collect_percentage = ? WHERE id = ?");
        st.bind(1, fraction).bind(2, id.value);
        expect_ok(st.run());
    }

    TrainingSet add_training_set(const TrainingSet& set) override {
        std::lock_guard lock(mu_);
        load_plot_type(set.plot_type);
        for (const auto& m : set.members) {
            const ImageRecord img = load_image(m.image);
            if (img.plot_type != set.plot_type)
                throw Error(ErrorCode::InvalidTrainingSet, "member from another plot type");
            auto current = current_label_locked(m.image);
            if (!current || current->label != m.label)
                throw Error(ErrorCode::InvalidTrainingSet,
                            "member image " + std::to_string(m.image.value) + " is not labeled as recorded");
        }
        Transaction tx(db_);
        {
            Statement st(db_, "INSERT INTO training_sets(plot_type_id, sampling_method, created_at) VALUES (?,?,?)");
            st.bind(1, set.plot_type.value).bind(2, set.sampling_method).bind(3, set.created_at);
            expect_ok(st.run());
        }
        TrainingSet stored = set;
        stored.id = TrainingSetId{db_.last_rowid()};
        for (std::size_t i = 0; i < set.members.size(); ++i) {
            Statement st(db_,
                         "INSERT INTO training_members(training_set_id, position, image_id, label_id) VALUES (?,?,?,?)");
            st.bind(1, stored.id.value)
                .bind(2, static_cast<std::int64_t>(i))
                .bind(3, set.members[i].image.value)
                .bind(4, set.members[i].label.value);
            expect_ok(st.run());
        }
        tx.commit();
        return stored;
    }

    TrainingSet training_set(TrainingSetId id) const override {
        std::lock_guard lock(mu_);
        return load_training_set(id);
    }

    InferenceId record_inference(const RunHistoryEntry& e) override {
        std::lock_guard lock(mu_);
        load_image(e.image);
        detail::check_inference(e, load_model(e.model));
        Statement st(db_,
                     "INSERT INTO run_history(inference_id, image_id, model_id, output_weights, classification, "
                     "confirmed, collected, collect_reason, stage_timings, inferred_at) VALUES (?,?,?,?,?,?,?,?,?,?)");
        st.bind(1, e.inference_id.value)
            .bind(2, e.image.value)
            .bind(3, e.model.value)
            .bind_blob(4, e.output_weights.data(), e.output_weights.size() * sizeof(double))
            .bind(5, e.classification.value)
            .bind(6, e.confirmed)
            .bind(7, e.collected)
            .bind(8, to_string(e.collect_reason))
            .bind(9, encode_timings(e.stage_timings))
            .bind(10, e.inferred_at);
        const int rc = st.run();
        if (is_constraint(rc))
            throw Error(ErrorCode::DuplicateInference, "inference " + std::to_string(e.inference_id.value));
        expect_ok(rc);
        return e.inference_id;
    }

    std::optional<RunHistoryEntry> find_inference(InferenceId id) const override {
        std::lock_guard lock(mu_);
        Statement st(db_, HYDRA_HISTORY_SELECT " WHERE h.inference_id = ?");
        st.bind(1, id.value);
        if (!st.step()) return std::nullopt;
        return read_history(st);
    }

    std::vector<RunHistoryEntry> query_inferences(const InferenceQuery& q) const override {
        std::lock_guard lock(mu_);
        Statement st(db_, HYDRA_HISTORY_SELECT
                     " JOIN images i ON i.id = h.image_id"
                     " WHERE (?1 = 0 OR h.image_id = ?2) AND (?3 = 0 OR h.model_id = ?4)"
                     " AND (?5 = 0 OR i.plot_type_id = ?6) AND (?7 = 0 OR h.inferred_at BETWEEN ?8 AND ?9)"
                     " ORDER BY h.inferred_at, h.inference_id");
        st.bind(1, q.image.has_value())
            .bind(2, q.image ? q.image->value : 0)
            .bind(3, q.model.has_value())
            .bind(4, q.model ? q.model->value : 0)
            .bind(5, q.plot_type.has_value())
            .bind(6, q.plot_type ? q.plot_type->value : 0)
            .bind(7, q.window.has_value())
            .bind(8, q.window ? q.window->from : 0)
            .bind(9, q.window ? q.window->to : 0);
        std::vector<RunHistoryEntry> out;
        while (st.step()) out.push_back(read_history(st));
        return out;
    }

    bool upsert_runtime(const RunTimeEntry& e, UtcMillis now) override {
        std::lock_guard lock(mu_);
        const UtcMillis cutoff = now - retention_;
        {
            Statement purge(db_, "DELETE FROM run_time WHERE inferred_at < ?");
            purge.bind(1, cutoff);
            expect_ok(purge.run());
        }
        if (e.inferred_at < cutoff) return false;
        Statement st(db_,
                     "INSERT OR REPLACE INTO run_time(inference_id, image_id, plot_type_id, image_path, gradcam_path, "
                     "classification, confirmed, inferred_at) VALUES (?,?,?,?,?,?,?,?)");
        st.bind(1, e.inference_id.value).bind(2, e.image.value).bind(3, e.plot_type.value).bind(4, e.image_path);
        if (e.gradcam_path)
            st.bind(5, *e.gradcam_path);
        else
            st.bind_null(5);
        st.bind(6, e.classification.value).bind(7, e.confirmed).bind(8, e.inferred_at);
        expect_ok(st.run());
        return true;
    }

    std::vector<RunTimeEntry> live_entries(std::optional<PlotTypeId> plot_type, UtcMillis now) const override {
        std::lock_guard lock(mu_);
        Statement st(db_,
                     "SELECT inference_id, image_id, plot_type_id, image_path, gradcam_path, classification, "
                     "confirmed, inferred_at FROM run_time WHERE inferred_at BETWEEN ?1 AND ?2 "
                     "AND (?3 = 0 OR plot_type_id = ?4) ORDER BY inferred_at DESC, inference_id DESC");
        st.bind(1, now - retention_)
            .bind(2, now)
            .bind(3, plot_type.has_value())
            .bind(4, plot_type ? plot_type->value : 0);
        std::vector<RunTimeEntry> out;
        while (st.step()) {
            RunTimeEntry e;
            e.inference_id = InferenceId{st.i64(0)};
            e.image = ImageId{st.i64(1)};
            e.plot_type = PlotTypeId{st.i64(2)};
            e.image_path = st.text(3);
            if (!st.is_null(4)) e.gradcam_path = st.text(4);
            e.classification = LabelId{st.i64(5)};
            e.confirmed = st.i32(6) != 0;
            e.inferred_at = st.i64(7);
            out.push_back(std::move(e));
        }
        return out;
    }

    UtcMillis retention_ms() const override { return retention_; }

private:
    static RunHistoryEntry read_history(const Statement& st) {
        RunHistoryEntry e;
        e.inference_id = InferenceId{st.i64(0)};
        e.image = ImageId{st.i64(1)};
        e.model = ModelId{st.i64(2)};
        e.output_weights = st.f64_blob(3);
        e.classification = LabelId{st.i64(4)};
        e.confirmed = st.i32(5) != 0;
        e.collected = st.i32(6) != 0;
        e.collect_reason = parse_collect_reason(st.text(7));
        e.stage_timings = decode_timings(st.text(8));
        e.inferred_at = st.i64(9);
        return e;
    }

    static ImageRecord read_image(const Statement& st, int c) {
        ImageRecord r;
        r.id = ImageId{st.i64(c)};
        r.plot_type = PlotTypeId{st.i64(c + 1)};
        r.run_number = st.i64(c + 2);
        r.sequence = st.i64(c + 3);
        r.capture_time = st.i64(c + 4);
        r.storage_path = st.text(c + 5);
        r.width = st.i32(c + 6);
        r.height = st.i32(c + 7);
        return r;
    }

    static LabelAssignment read_assignment(const Statement& st, int c) {
        return LabelAssignment{AssignmentId{st.i64(c)}, ImageId{st.i64(c + 1)}, LabelId{st.i64(c + 2)},
                               st.text(c + 3), st.i64(c + 4), st.i32(c + 5) != 0};
    }

    void expect_ok(int rc) const {
        if (rc != SQLITE_OK) throw Error(ErrorCode::Persistence, sqlite3_errmsg(db_.handle()));
    }

    void insert_labeler(PlotTypeId id, const std::string& user) {
        Statement st(db_, "INSERT OR IGNORE INTO plot_type_labelers(plot_type_id, user) VALUES (?,?)");
        st.bind(1, id.value).bind(2, user);
        expect_ok(st.run());
    }

    PlotType load_plot_type(PlotTypeId id) const {
        Statement st(db_, "SELECT name, input_width, input_height, channels FROM plot_types WHERE id = ?");
        st.bind(1, id.value);
        if (!st.step()) throw Error(ErrorCode::UnknownPlotType, "plot type " + std::to_string(id.value));
        PlotType pt;
        pt.id = id;
        pt.name = st.text(0);
        pt.input_width = st.i32(1);
        pt.input_height = st.i32(2);
        pt.channels = st.i32(3);
        Statement users(db_, "SELECT user FROM plot_type_labelers WHERE plot_type_id = ?");
        users.bind(1, id.value);
        while (users.step()) pt.allowed_labelers.insert(users.text(0));
        Statement labels(db_, "SELECT id, name, color, severity FROM labels WHERE plot_type_id = ? ORDER BY id");
        labels.bind(1, id.value);
        while (labels.step())
            pt.labels.push_back(LabelDef{LabelId{labels.i64(0)}, id, labels.text(1), parse_color(labels.text(2)),
                                         parse_severity(labels.text(3))});
        return pt;
    }

    LabelDef load_label(LabelId id) const {
        Statement st(db_, "SELECT plot_type_id, name, color, severity FROM labels WHERE id = ?");
        st.bind(1, id.value);
        if (!st.step()) throw Error(ErrorCode::UnknownLabel, "label " + std::to_string(id.value));
        return LabelDef{id, PlotTypeId{st.i64(0)}, st.text(1), parse_color(st.text(2)), parse_severity(st.text(3))};
    }

    ImageRecord load_image(ImageId id) const {
        Statement st(db_,
                     "SELECT id, plot_type_id, run_number, sequence, capture_time, storage_path, width, height "
                     "FROM images WHERE id = ?");
        st.bind(1, id.value);
        if (!st.step()) throw Error(ErrorCode::UnknownImage, "image " + std::to_string(id.value));
        return read_image(st, 0);
    }

    ModelRecord load_model(ModelId id) const {
        Statement st(db_,
                     "SELECT plot_type_id, artifact_path, label_order, active, training_set_id, sampling_method, "
                     "created_at, input_width, input_height, channels, collect_percentage FROM models WHERE id = ?");
        st.bind(1, id.value);
        if (!st.step()) throw Error(ErrorCode::UnknownModel, "model " + std::to_string(id.value));
        ModelRecord m;
        m.id = id;
        m.plot_type = PlotTypeId{st.i64(0)};
        m.artifact_path = st.text(1);
        m.label_order = decode_ids(st.text(2));
        m.active = st.i32(3) != 0;
        if (!st.is_null(4)) m.training_set = TrainingSetId{st.i64(4)};
        m.sampling_method = st.text(5);
        m.created_at = st.i64(6);
        m.input_width = st.i32(7);
        m.input_height = st.i32(8);
        m.channels = st.i32(9);
        m.collect_percentage = st.f64(10);
        return m;
    }

    TrainingSet load_training_set(TrainingSetId id) const {
        Statement st(db_, "SELECT plot_type_id, sampling_method, created_at FROM training_sets WHERE id = ?");
        st.bind(1, id.value);
        if (!st.step()) throw Error(ErrorCode::InvalidTrainingSet, "unknown training set");
        TrainingSet set;
        set.id = id;
        set.plot_type = PlotTypeId{st.i64(0)};
        set.sampling_method = st.text(1);
        set.created_at = st.i64(2);
        Statement members(db_,
                          "SELECT image_id, label_id FROM training_members WHERE training_set_id = ? ORDER BY position");
        members.bind(1, id.value);
        while (members.step()) set.members.push_back({ImageId{members.i64(0)}, LabelId{members.i64(1)}});
        return set;
    }

    std::optional<LabelAssignment> current_label_locked(ImageId id) const {
        Statement st(db_,
                     "SELECT id, image_id, label_id, labeler, assigned_at, superseded FROM label_assignments "
                     "WHERE image_id = ? AND superseded = 0");
        st.bind(1, id.value);
        if (!st.step()) return std::nullopt;
        return read_assignment(st, 0);
    }

    mutable std::recursive_mutex mu_;
    mutable Database db_;
    UtcMillis retention_;
};

} // namespace

std::unique_ptr<Store> open_sqlite_store(const std::filesystem::path& db_path, UtcMillis retention_ms) {
    return std::make_unique<SqliteStore>(db_path, retention_ms);
}

} // namespace hydra
