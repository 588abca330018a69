#pragma once

#include "hydra/messages.hpp"

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace hydra {

inline constexpr std::size_t kDefaultBalancerCapacity = 1024;

// Round-robin distribution of orders over registered workers. Rotation is
// strict: worker load is ignored. The only change made to an order is one
// appended "balancer" timing entry.
class Balancer {
public:
    explicit Balancer(std::size_t inbound_capacity = kDefaultBalancerCapacity);
    ~Balancer();

    Balancer(const Balancer&) = delete;
    Balancer& operator=(const Balancer&) = delete;

    /// Returns the new worker count. Throws DuplicateEndpoint.
    std::size_t register_worker(const std::string& endpoint, std::shared_ptr<Sink<InferenceOrder>> sink);
    /// Returns the new worker count. Throws UnknownEndpoint.
    std::size_t deregister_worker(const std::string& endpoint);
    std::size_t worker_count() const;
    std::vector<std::string> endpoints() const;

    /// Forwards to the worker under the cursor and advances it. With no workers
    /// the order goes back to the head of the inbound queue and NoWorkers is thrown.
    std::size_t dispatch(InferenceOrder order);

    /// Inbound channel drained by the dispatch thread started with start().
    std::shared_ptr<BoundedQueue<InferenceOrder>> inbound() const { return inbound_; }
    void start();
    /// Closes the inbound channel, dispatches what is queued and joins.
    void stop();

    /// Seconds spent in each dispatch() so far (most recent 1<<16 kept).
    std::vector<double> recorded_durations() const;
    std::uint64_t dispatched() const noexcept { return dispatched_.load(); }

private:
    struct Worker {
        std::string endpoint;
        std::shared_ptr<Sink<InferenceOrder>> sink;
    };

    void run();

    mutable std::mutex mu_;
    std::condition_variable workers_changed_;
    std::vector<Worker> workers_;
    std::size_t cursor_ = 0;

    std::shared_ptr<BoundedQueue<InferenceOrder>> inbound_;
    std::thread thread_;

    mutable std::mutex stats_mu_;
    std::vector<double> durations_;
    std::size_t durations_next_ = 0;
    std::atomic<std::uint64_t> dispatched_{0};
};

} // namespace hydra
