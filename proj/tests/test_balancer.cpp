#include "support.hpp"

#include "hydra/balancer.hpp"

#include <mutex>
#include <thread>

using namespace hydra;
using hydra::test::error_code_of;

namespace {

class RecordingSink final : public Sink<InferenceOrder> {
public:
    bool send(InferenceOrder order) override {
        std::lock_guard lock(mu);
        received.push_back(std::move(order));
        return true;
    }
    std::size_t count() {
        std::lock_guard lock(mu);
        return received.size();
    }
    std::mutex mu;
    std::vector<InferenceOrder> received;
};

InferenceOrder order(std::int64_t id) {
    InferenceOrder o;
    o.order_id = OrderId{id};
    o.stage_timings = {{"feeder", 0.001}};
    return o;
}

} // namespace

TEST_CASE("strict round robin over registered workers") {
    Balancer b;
    std::vector<std::shared_ptr<RecordingSink>> sinks;
    for (int i = 0; i < 3; ++i) {
        sinks.push_back(std::make_shared<RecordingSink>());
        CHECK(b.register_worker("w" + std::to_string(i), sinks.back()) == static_cast<std::size_t>(i + 1));
    }
    for (int i = 0; i < 7; ++i) CHECK(b.dispatch(order(i)) == static_cast<std::size_t>(i % 3));
    CHECK(sinks[0]->received.size() == 3);
    CHECK(sinks[1]->received.size() == 2);
    CHECK(sinks[0]->received[1].order_id == OrderId{3});

    // Only a balancer timing is appended.
    const auto& got = sinks[1]->received[0];
    REQUIRE(got.stage_timings.size() == 2);
    CHECK(got.stage_timings[0] == StageTiming{"feeder", 0.001});
    CHECK(got.stage_timings[1].stage == "balancer");
    CHECK(got.stage_timings[1].seconds >= 0.0);
    CHECK(b.dispatched() == 7);
    CHECK(b.recorded_durations().size() == 7);
}

TEST_CASE("registry errors and cursor clamping") {
    Balancer b;
    auto s = std::make_shared<RecordingSink>();
    b.register_worker("a", s);
    CHECK(error_code_of([&] { b.register_worker("a", s); }) == ErrorCode::DuplicateEndpoint);
    CHECK(error_code_of([&] { b.deregister_worker("zz"); }) == ErrorCode::UnknownEndpoint);

    b.register_worker("b", s);
    b.register_worker("c", s);
    b.dispatch(order(1));
    b.dispatch(order(2));  // cursor now at "c"
    CHECK(b.deregister_worker("c") == 2);
    CHECK(b.dispatch(order(3)) == 0);  // clamped back to "a"
    CHECK(b.deregister_worker("a") == 1);
    CHECK(b.dispatch(order(4)) == 0);
    CHECK(b.endpoints() == std::vector<std::string>{"b"});
}

TEST_CASE("dispatch with no workers re-queues the order") {
    Balancer b;
    CHECK(error_code_of([&] { b.dispatch(order(42)); }) == ErrorCode::NoWorkers);
    REQUIRE(b.inbound()->size() == 1);

    auto s = std::make_shared<RecordingSink>();
    b.start();
    b.register_worker("late", s);
    for (int i = 0; i < 200 && s->count() == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    b.stop();
    REQUIRE(s->received.size() == 1);
    CHECK(s->received[0].order_id == OrderId{42});
}

TEST_CASE("dispatch thread drains the inbound queue in order") {
    Balancer b(16);
    auto s1 = std::make_shared<RecordingSink>();
    auto s2 = std::make_shared<RecordingSink>();
    b.register_worker("a", s1);
    b.register_worker("b", s2);
    b.start();
    for (int i = 0; i < 100; ++i) REQUIRE(b.inbound()->push(order(i)));
    b.stop();
    REQUIRE(s1->received.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(s1->received[i].order_id == OrderId{static_cast<std::int64_t>(2 * i)});
        CHECK(s2->received[i].order_id == OrderId{static_cast<std::int64_t>(2 * i + 1)});
    }
}
