#include "hydra/balancer.hpp"

#include "hydra/error.hpp"

#include <algorithm>
#include <chrono>

namespace hydra {
namespace {
constexpr std::size_t kDurationWindow = 1 << 16;
}

Balancer::Balancer(std::size_t inbound_capacity)
    : inbound_(std::make_shared<BoundedQueue<InferenceOrder>>(inbound_capacity)) {}

Balancer::~Balancer() { stop(); }

std::size_t Balancer::register_worker(const std::string& endpoint, std::shared_ptr<Sink<InferenceOrder>> sink) {
    std::lock_guard lock(mu_);
    for (const auto& w : workers_)
        if (w.endpoint == endpoint) throw Error(ErrorCode::DuplicateEndpoint, endpoint);
    workers_.push_back({endpoint, std::move(sink)});
    workers_changed_.notify_all();
    return workers_.size();
}

std::size_t Balancer::deregister_worker(const std::string& endpoint) {
    std::lock_guard lock(mu_);
    auto it = std::find_if(workers_.begin(), workers_.end(), [&](const Worker& w) { return w.endpoint == endpoint; });
    if (it == workers_.end()) throw Error(ErrorCode::UnknownEndpoint, endpoint);
    const auto removed = static_cast<std::size_t>(it - workers_.begin());
    workers_.erase(it);
    if (removed < cursor_) --cursor_;
    if (cursor_ >= workers_.size()) cursor_ = 0;
    return workers_.size();
}

std::size_t Balancer::worker_count() const {
    std::lock_guard lock(mu_);
    return workers_.size();
}

std::vector<std::string> Balancer::endpoints() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& w : workers_) out.push_back(w.endpoint);
    return out;
}

std::size_t Balancer::dispatch(InferenceOrder order) {
    const auto start = std::chrono::steady_clock::now();
    std::lock_guard lock(mu_);
    if (workers_.empty()) {
        inbound_->push_front(std::move(order));
        throw Error(ErrorCode::NoWorkers, "no predict workers registered");
    }
    const std::size_t index = cursor_;
    cursor_ = (cursor_ + 1) % workers_.size();

    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    order.stage_timings.push_back({std::string(kStageBalancer), elapsed});
    {
        std::lock_guard stats(stats_mu_);
        if (durations_.size() < kDurationWindow) {
            durations_.push_back(elapsed);
        } else {
            durations_[durations_next_] = elapsed;
            durations_next_ = (durations_next_ + 1) % kDurationWindow;
        }
    }
    ++dispatched_;
    workers_[index].sink->send(std::move(order));
    return index;
}

void Balancer::start() {
    if (thread_.joinable()) return;
    thread_ = std::thread([this] { run(); });
}

void Balancer::stop() {
    inbound_->close();
    {
        std::lock_guard lock(mu_);
        workers_changed_.notify_all();
    }
    if (thread_.joinable()) thread_.join();
}

void Balancer::run() {
    while (auto order = inbound_->pop()) {
        try {
            dispatch(std::move(*order));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoWorkers) throw;
            // The order is back at the head of the queue; wait for a worker.
            std::unique_lock lock(mu_);
            workers_changed_.wait_for(lock, std::chrono::milliseconds(50),
                                      [&] { return !workers_.empty() || inbound_->closed(); });
            if (workers_.empty() && inbound_->closed()) return;
        }
    }
}

std::vector<double> Balancer::recorded_durations() const {
    std::lock_guard stats(stats_mu_);
    return durations_;
}

} // namespace hydra
