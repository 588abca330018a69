#pragma once

#include "hydra/classifier.hpp"
#include "hydra/error.hpp"
#include "hydra/messages.hpp"
#include "hydra/store.hpp"

#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <string>

#include <unistd.h>

namespace hydra::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "hydra") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline PlotTypeSpec occupancy_spec(int size = 16) {
    PlotTypeSpec s;
    s.name = "occupancy";
    s.input_width = size;
    s.input_height = size;
    s.channels = 1;
    s.labels = {{"Good", parse_color("green"), Severity::Good},
                {"DeadRegion", parse_color("red"), Severity::Bad},
                {"Other", parse_color("gray"), Severity::Other}};
    s.allowed_labelers = {"alice"};
    return s;
}

// Runs `body` once against each store backend.
inline void for_each_store(const std::function<void(Store&, const std::string&)>& body) {
    {
        auto store = make_memory_store();
        body(*store, "memory");
    }
    {
        TempDir dir("store");
        auto store = open_sqlite_store(dir / "hydra.db");
        body(*store, "sqlite");
    }
}

inline ImageRecord add_test_image(Store& store, PlotTypeId pt, std::int64_t seq, UtcMillis capture = 1000,
                                  std::int64_t run = 1) {
    ImageRecord r;
    r.plot_type = pt;
    r.run_number = run;
    r.sequence = seq;
    r.capture_time = capture;
    r.storage_path = "occupancy/img_" + std::to_string(run) + "_" + std::to_string(seq) + ".pgm";
    r.width = 16;
    r.height = 16;
    return store.add_image(r);
}

// Registers an untrained reference model for `pt` (label order = plot type
// order), saves its artifact and activates it with all thresholds at `threshold`.
inline ModelRecord add_reference_model(Store& store, const PlotType& pt, const std::filesystem::path& artifact,
                                       double threshold = 0.0, std::uint64_t seed = 3, double collect = 0.0) {
    std::vector<LabelId> order;
    for (const auto& l : pt.labels) order.push_back(l.id);
    const auto clf = ReferenceClassifier::initialize(pt.id, order, pt.channels, 8, seed);
    clf.save(artifact);
    ModelRecord m;
    m.plot_type = pt.id;
    m.artifact_path = artifact.string();
    m.label_order = order;
    m.input_width = pt.input_width;
    m.input_height = pt.input_height;
    m.channels = pt.channels;
    m.collect_percentage = collect;
    m = store.add_model(m);
    std::vector<ThresholdConfig> rows;
    for (auto l : order) rows.push_back({m.id, l, threshold});
    store.set_thresholds(m.id, rows);
    store.set_active_model(m.id);
    return store.model(m.id);
}

// Sink that keeps every message it receives.
template <class T>
class Collector final : public Sink<T> {
public:
    bool send(T message) override {
        std::lock_guard lock(mu_);
        items_.push_back(std::move(message));
        return true;
    }
    std::vector<T> items() const {
        std::lock_guard lock(mu_);
        return items_;
    }
    std::size_t size() const {
        std::lock_guard lock(mu_);
        return items_.size();
    }

private:
    mutable std::mutex mu_;
    std::vector<T> items_;
};

template <class F>
ErrorCode error_code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected hydra::Error");
    return ErrorCode::Validation;
}

} // namespace hydra::test
