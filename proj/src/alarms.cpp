#include "hydra/alarms.hpp"

#include <algorithm>

namespace hydra {

std::string_view to_string(AlarmKind kind) noexcept {
    return kind == AlarmKind::ConfirmedBad ? "ConfirmedBad" : "Unconfirmed";
}

std::uint64_t AlarmBus::publish(AlarmEvent event) {
    std::lock_guard lock(mu_);
    if (std::find(recent_inferences_.begin(), recent_inferences_.end(), event.inference) != recent_inferences_.end())
        return 0;
    event.sequence = next_++;
    events_.push_back(event);
    recent_inferences_.push_back(event.inference);
    while (events_.size() > capacity_) {
        events_.pop_front();
        recent_inferences_.pop_front();
    }
    cv_.notify_all();
    return event.sequence;
}

std::vector<AlarmEvent> AlarmBus::events_after(std::uint64_t sequence) const {
    std::lock_guard lock(mu_);
    std::vector<AlarmEvent> out;
    for (const auto& e : events_)
        if (e.sequence > sequence) out.push_back(e);
    return out;
}

std::vector<AlarmEvent> AlarmBus::wait_after(std::uint64_t sequence, std::chrono::milliseconds timeout) const {
    {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, timeout, [&] { return next_ - 1 > sequence; });
    }
    return events_after(sequence);
}

std::uint64_t AlarmBus::last_sequence() const {
    std::lock_guard lock(mu_);
    return next_ - 1;
}

} // namespace hydra
