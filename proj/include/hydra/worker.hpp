#pragma once

#include "hydra/classifier.hpp"
#include "hydra/error.hpp"
#include "hydra/messages.hpp"
#include "hydra/store.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace hydra {

inline constexpr std::size_t kDefaultWorkerBuffer = 256;

struct WorkerOptions {
    std::size_t buffer_capacity = kDefaultWorkerBuffer;
    /// Relative artifact paths are resolved against this directory.
    std::filesystem::path model_root;
    /// When set, dropped orders are appended here as JSON lines.
    std::filesystem::path dead_letter_log;
    std::function<UtcMillis()> clock = now_ms;
};

struct DroppedOrder {
    OrderId order_id;
    ImageId image;
    ErrorCode reason;
    std::string message;
};

// One predict process: a FIFO buffer of orders and a sequential inference
// loop. Each worker loads its own model heads; a head is immutable once loaded.
class PredictWorker {
public:
    PredictWorker(std::string endpoint, const Store& store, BackendLoader loader, std::shared_ptr<Sink<Report>> reports,
                  WorkerOptions options = {});
    ~PredictWorker();

    PredictWorker(const PredictWorker&) = delete;
    PredictWorker& operator=(const PredictWorker&) = delete;

    const std::string& endpoint() const noexcept { return endpoint_; }

    /// Blocks while the buffer is full.
    void enqueue(InferenceOrder order);
    /// Blocks until an order is available; nullopt once stopped and drained.
    std::optional<InferenceOrder> next();
    /// Sink that feeds this worker's buffer (what the balancer registers).
    std::shared_ptr<Sink<InferenceOrder>> sink() const { return sink_; }

    /// Runs the order's plot-type head. Throws NoActiveModel, ShapeMismatch or
    /// BackendFailure.
    Report infer(InferenceOrder order);

    void start();
    /// Stops accepting orders, finishes the buffered ones and joins.
    void stop();

    std::vector<DroppedOrder> dropped() const;
    std::uint64_t processed() const;

private:
    struct Head {
        ModelRecord model;
        std::unique_ptr<ClassifierBackend> backend;
    };

    const Head& head_for(const ModelRecord& model);
    const PlotType& plot_type_for(PlotTypeId id);
    void drop(const InferenceOrder& order, const Error& error);
    void run();

    std::string endpoint_;
    const Store& store_;
    BackendLoader loader_;
    std::shared_ptr<Sink<Report>> reports_;
    WorkerOptions options_;

    std::shared_ptr<BoundedQueue<InferenceOrder>> buffer_;
    std::shared_ptr<Sink<InferenceOrder>> sink_;
    std::map<ModelId, Head> heads_;
    std::map<PlotTypeId, PlotType> plot_types_;

    mutable std::mutex stats_mu_;
    std::vector<DroppedOrder> dropped_;
    std::uint64_t processed_ = 0;
    std::thread thread_;
};

} // namespace hydra
