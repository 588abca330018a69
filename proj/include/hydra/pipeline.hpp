#pragma once

#include "hydra/alarms.hpp"
#include "hydra/balancer.hpp"
#include "hydra/keeper.hpp"
#include "hydra/worker.hpp"

#include <memory>
#include <string>
#include <vector>

namespace hydra {

struct PipelineOptions {
    int workers = 1;
    std::size_t balancer_capacity = kDefaultBalancerCapacity;
    WorkerOptions worker;
    KeeperOptions keeper;
    BackendLoader loader = reference_loader();
};

// In-process back end: balancer, N predict workers and the keeper, wired with
// bounded queues. Orders go in through inbound(); the feeder is separate.
class Pipeline {
public:
    Pipeline(Store& store, AlarmBus& alarms, PipelineOptions options);
    ~Pipeline();

    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;

    std::shared_ptr<Sink<InferenceOrder>> inbound() const { return inbound_; }

    void start();
    /// Drains every stage in pipeline order and joins all threads.
    void stop();

    Balancer& balancer() noexcept { return balancer_; }
    Keeper& keeper() noexcept { return keeper_; }
    const std::vector<std::unique_ptr<PredictWorker>>& workers() const noexcept { return workers_; }

private:
    Keeper keeper_;
    Balancer balancer_;
    std::vector<std::unique_ptr<PredictWorker>> workers_;
    std::shared_ptr<Sink<InferenceOrder>> inbound_;
    bool stopped_ = false;
};

} // namespace hydra
