#pragma once

#include "hydra/types.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <vector>

namespace hydra {

enum class AlarmKind { ConfirmedBad, Unconfirmed };

std::string_view to_string(AlarmKind kind) noexcept;

struct AlarmEvent {
    std::uint64_t sequence = 0;  // assigned by the bus, strictly increasing from 1
    InferenceId inference;
    PlotTypeId plot_type;
    ImageId image;
    LabelId classification;
    AlarmKind kind = AlarmKind::Unconfirmed;
    UtcMillis raised_at = 0;

    friend bool operator==(const AlarmEvent&, const AlarmEvent&) = default;
};

// In-process alarm stream. Keeps the most recent `capacity` events; readers
// poll with the last sequence they saw, optionally waiting for new events.
class AlarmBus {
public:
    explicit AlarmBus(std::size_t capacity = 4096) : capacity_(capacity) {}

    /// Returns the assigned sequence number. A second publish for the same
    /// inference is ignored and returns 0.
    std::uint64_t publish(AlarmEvent event);

    std::vector<AlarmEvent> events_after(std::uint64_t sequence) const;
    /// Waits up to `timeout` for at least one event newer than `sequence`.
    std::vector<AlarmEvent> wait_after(std::uint64_t sequence, std::chrono::milliseconds timeout) const;
    std::uint64_t last_sequence() const;

private:
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::deque<AlarmEvent> events_;
    std::deque<InferenceId> recent_inferences_;
    std::size_t capacity_;
    std::uint64_t next_ = 1;
};

} // namespace hydra
