#pragma once

#include "hydra/gradcam.hpp"
#include "hydra/image.hpp"
#include "hydra/queue.hpp"
#include "hydra/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace hydra {

inline constexpr std::string_view kStageFeeder = "feeder";
inline constexpr std::string_view kStageBalancer = "balancer";
inline constexpr std::string_view kStagePredict = "predict";
inline constexpr std::string_view kStageKeeper = "keeper";

/// Carries one resized image from the feeder through the balancer to a worker.
struct InferenceOrder {
    OrderId order_id;
    ImageId image;
    PlotTypeId plot_type;
    UtcMillis created_at = 0;
    StageTimings stage_timings;
    Image payload;

    friend bool operator==(const InferenceOrder&, const InferenceOrder&) = default;
};

/// Inference result sent from a worker to the keeper.
struct Report {
    OrderId order_id;
    ImageId image;
    ModelId model;
    PlotTypeId plot_type;
    UtcMillis inferred_at = 0;
    LabelId classification;
    std::vector<double> output_weights;
    StageTimings stage_timings;
    std::optional<GradCamMap> gradcam;

    friend bool operator==(const Report&, const Report&) = default;
};

// Wire frames: a little-endian u32 body length followed by the body. Layouts
// are documented in docs/wire-format.md.
std::vector<std::uint8_t> encode_order(const InferenceOrder& order);
std::vector<std::uint8_t> encode_report(const Report& report);
/// `frame` must hold exactly one frame, length prefix included. Throws MalformedFrame.
InferenceOrder decode_order(std::span<const std::uint8_t> frame);
Report decode_report(std::span<const std::uint8_t> frame);
/// Reads the next frame (prefix included) from a stream; nullopt at clean EOF.
std::optional<std::vector<std::uint8_t>> read_frame(std::istream& in);

// Point-to-point, order-preserving message transport between stages.
template <class T>
class Sink {
public:
    virtual ~Sink() = default;
    /// False when the receiving side has shut down.
    virtual bool send(T message) = 0;
};

template <class T>
class QueueSink final : public Sink<T> {
public:
    explicit QueueSink(std::shared_ptr<BoundedQueue<T>> queue) : queue_(std::move(queue)) {}
    bool send(T message) override { return queue_->push(std::move(message)); }

private:
    std::shared_ptr<BoundedQueue<T>> queue_;
};

/// Serializes each order as a frame onto a byte stream.
class OrderFrameSink final : public Sink<InferenceOrder> {
public:
    explicit OrderFrameSink(std::ostream& out) : out_(out) {}
    bool send(InferenceOrder order) override;

private:
    std::ostream& out_;
};

} // namespace hydra
