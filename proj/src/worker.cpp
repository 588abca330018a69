#include "hydra/worker.hpp"

#include "hydra/error.hpp"
#include "hydra/gradcam.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>

namespace hydra {

PredictWorker::PredictWorker(std::string endpoint, const Store& store, BackendLoader loader,
                             std::shared_ptr<Sink<Report>> reports, WorkerOptions options)
    : endpoint_(std::move(endpoint)),
      store_(store),
      loader_(std::move(loader)),
      reports_(std::move(reports)),
      options_(std::move(options)),
      buffer_(std::make_shared<BoundedQueue<InferenceOrder>>(options_.buffer_capacity)),
      sink_(std::make_shared<QueueSink<InferenceOrder>>(buffer_)) {}

PredictWorker::~PredictWorker() { stop(); }

void PredictWorker::enqueue(InferenceOrder order) { buffer_->push(std::move(order)); }

std::optional<InferenceOrder> PredictWorker::next() { return buffer_->pop(); }

const PlotType& PredictWorker::plot_type_for(PlotTypeId id) {
    auto it = plot_types_.find(id);
    if (it == plot_types_.end()) it = plot_types_.emplace(id, store_.plot_type(id)).first;
    return it->second;
}

const PredictWorker::Head& PredictWorker::head_for(const ModelRecord& model) {
    auto it = heads_.find(model.id);
    if (it != heads_.end()) return it->second;

    std::filesystem::path path = model.artifact_path;
    if (path.is_relative() && !options_.model_root.empty()) path = options_.model_root / path;
    std::unique_ptr<ClassifierBackend> backend;
    try {
        backend = loader_(path);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::BackendFailure, "loading " + path.string() + ": " + e.what());
    }
    if (!backend || backend->label_count() != model.label_order.size())
        throw Error(ErrorCode::BackendFailure, "artifact label count disagrees with model record");
    return heads_.emplace(model.id, Head{model, std::move(backend)}).first->second;
}

Report PredictWorker::infer(InferenceOrder order) {
    const auto start = std::chrono::steady_clock::now();
    const auto model = store_.active_model(order.plot_type);
    if (!model) throw Error(ErrorCode::NoActiveModel, "no active model for plot type " + std::to_string(order.plot_type.value));
    if (order.payload.width != model->input_width || order.payload.height != model->input_height ||
        order.payload.channels != model->channels)
        throw Error(ErrorCode::ShapeMismatch, "payload " + std::to_string(order.payload.width) + "x" +
                                                  std::to_string(order.payload.height) + " does not match model " +
                                                  std::to_string(model->id.value));
    const Head& head = head_for(*model);

    ForwardResult fwd;
    try {
        fwd = head.backend->forward(order.payload);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::BackendFailure, e.what());
    }
    if (fwd.logits.size() != model->label_order.size())
        throw Error(ErrorCode::BackendFailure, "backend returned wrong logit count");

    Report report;
    report.order_id = order.order_id;
    report.image = order.image;
    report.model = model->id;
    report.plot_type = order.plot_type;
    report.output_weights = softmax(fwd.logits);
    const std::size_t best = argmax(report.output_weights);
    report.classification = model->label_order[best];

    const LabelDef* label = plot_type_for(order.plot_type).find_label(report.classification);
    if (label && label->severity == Severity::Bad) {
        const auto grads = head.backend->score_gradients(fwd, best);
        report.gradcam = gradcam(fwd.feature_maps, grads, order.payload.width, order.payload.height);
    }

    report.stage_timings = std::move(order.stage_timings);
    report.stage_timings.push_back(
        {std::string(kStagePredict), std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
    report.inferred_at = options_.clock();
    return report;
}

void PredictWorker::drop(const InferenceOrder& order, const Error& error) {
    spdlog::warn("worker {}: dropping order {}: {}", endpoint_, order.order_id.value, error.what());
    std::lock_guard lock(stats_mu_);
    dropped_.push_back({order.order_id, order.image, error.code(), error.what()});
    if (!options_.dead_letter_log.empty()) {
        std::ofstream out(options_.dead_letter_log, std::ios::app);
        out << nlohmann::json{{"worker", endpoint_},
                              {"order_id", order.order_id.value},
                              {"image_id", order.image.value},
                              {"plot_type_id", order.plot_type.value},
                              {"reason", to_string(error.code())},
                              {"message", error.what()}}
                   .dump()
            << '\n';
    }
}

void PredictWorker::run() {
    while (auto order = next()) {
        try {
            InferenceOrder copy_for_log{order->order_id, order->image, order->plot_type, order->created_at, {}, {}};
            try {
                reports_->send(infer(std::move(*order)));
            } catch (const Error& e) {
                drop(copy_for_log, e);
                continue;
            }
        } catch (const std::exception& e) {
            spdlog::error("worker {}: unexpected failure: {}", endpoint_, e.what());
        }
        std::lock_guard lock(stats_mu_);
        ++processed_;
    }
}

void PredictWorker::start() {
    if (thread_.joinable()) return;
    thread_ = std::thread([this] { run(); });
}

void PredictWorker::stop() {
    buffer_->close();
    if (thread_.joinable()) thread_.join();
}

std::vector<DroppedOrder> PredictWorker::dropped() const {
    std::lock_guard lock(stats_mu_);
    return dropped_;
}

std::uint64_t PredictWorker::processed() const {
    std::lock_guard lock(stats_mu_);
    return processed_;
}

} // namespace hydra
