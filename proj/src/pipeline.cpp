#include "hydra/pipeline.hpp"

#include "hydra/error.hpp"

namespace hydra {

Pipeline::Pipeline(Store& store, AlarmBus& alarms, PipelineOptions options)
    : keeper_(store, alarms, options.keeper),
      balancer_(options.balancer_capacity),
      inbound_(std::make_shared<QueueSink<InferenceOrder>>(balancer_.inbound())) {
    if (options.workers < 1) throw Error(ErrorCode::NoWorkers, "pipeline needs at least one worker");
    for (int i = 0; i < options.workers; ++i) {
        auto w = std::make_unique<PredictWorker>("worker-" + std::to_string(i), store, options.loader, keeper_.sink(),
                                                 options.worker);
        balancer_.register_worker(w->endpoint(), w->sink());
        workers_.push_back(std::move(w));
    }
}

Pipeline::~Pipeline() { stop(); }

void Pipeline::start() {
    keeper_.start();
    for (auto& w : workers_) w->start();
    balancer_.start();
}

void Pipeline::stop() {
    if (stopped_) return;
    stopped_ = true;
    balancer_.stop();
    for (auto& w : workers_) w->stop();
    keeper_.stop();
}

} // namespace hydra
