#include "support.hpp"

#include "hydra/worker.hpp"

#include <fstream>
#include <json.hpp>

using namespace hydra;
using hydra::test::Collector;
using hydra::test::error_code_of;

namespace {

// Backend with fixed logits and a single constant feature map.
class FixedBackend final : public ClassifierBackend {
public:
    explicit FixedBackend(std::vector<double> logits) : logits_(std::move(logits)) {}
    std::size_t label_count() const override { return logits_.size(); }
    ForwardResult forward(const Image& payload) const override {
        FeatureMap fm{payload.width - 2, payload.height - 2,
                      std::vector<double>(static_cast<std::size_t>(payload.width - 2) * (payload.height - 2), 1.0)};
        fm.values[0] = 2.0;
        return {logits_, {fm}};
    }
    std::vector<FeatureMap> score_gradients(const ForwardResult& fwd, std::size_t) const override {
        const auto& fm = fwd.feature_maps[0];
        return {{fm.width, fm.height, std::vector<double>(fm.values.size(), 1.0)}};
    }

private:
    std::vector<double> logits_;
};

BackendLoader fixed_loader(std::vector<double> logits) {
    return [logits](const std::filesystem::path&) { return std::make_unique<FixedBackend>(logits); };
}

struct Fixture {
    std::unique_ptr<Store> store = make_memory_store();
    test::TempDir dir{"worker"};
    PlotType pt = store->register_plot_type(test::occupancy_spec(8));
    ModelRecord model = test::add_reference_model(*store, pt, dir / "m.hydm");
    std::shared_ptr<Collector<Report>> reports = std::make_shared<Collector<Report>>();

    InferenceOrder order(std::int64_t id, int size = 8) const {
        InferenceOrder o;
        o.order_id = OrderId{id};
        o.image = ImageId{id};
        o.plot_type = pt.id;
        o.stage_timings = {{"feeder", 0.001}, {"balancer", 1e-7}};
        o.payload = Image(size, size, 1, 0.5f);
        return o;
    }
};

} // namespace

TEST_CASE("infer produces a normalized report with predict timing appended") {
    Fixture f;
    WorkerOptions opts;
    opts.clock = [] { return UtcMillis{1234}; };
    PredictWorker w("w0", *f.store, reference_loader(), f.reports, opts);
    const Report r = w.infer(f.order(5));
    CHECK(r.order_id == OrderId{5});
    CHECK(r.model == f.model.id);
    CHECK(r.inferred_at == 1234);
    CHECK_NOTHROW(validate_weights(r.output_weights, 3));
    CHECK(r.classification == f.model.label_order[argmax(r.output_weights)]);
    REQUIRE(r.stage_timings.size() == 3);
    CHECK(r.stage_timings[2].stage == "predict");
}

TEST_CASE("heatmaps are produced only for Bad classifications") {
    Fixture f;
    PredictWorker good("g", *f.store, fixed_loader({3.0, 0.0, 0.0}), f.reports);
    CHECK_FALSE(good.infer(f.order(1)).gradcam);

    PredictWorker bad("b", *f.store, fixed_loader({0.0, 3.0, 0.0}), f.reports);
    const Report r = bad.infer(f.order(2));
    CHECK(r.classification == f.pt.labels[1].id);
    REQUIRE(r.gradcam);
    CHECK(r.gradcam->width == 8);
    CHECK(r.gradcam->at(0, 0) == 1.0);
    CHECK(r.gradcam->at(7, 7) == 0.5);
}

TEST_CASE("errors from infer") {
    Fixture f;
    PredictWorker w("w", *f.store, reference_loader(), f.reports);
    CHECK(error_code_of([&] { w.infer(f.order(1, 9)); }) == ErrorCode::ShapeMismatch);

    auto o = f.order(2);
    auto other = test::occupancy_spec(8);
    other.name = "timing";
    o.plot_type = f.store->register_plot_type(other).id;
    CHECK(error_code_of([&] { w.infer(o); }) == ErrorCode::NoActiveModel);

    PredictWorker broken("x", *f.store, fixed_loader({1.0, 2.0}), f.reports);
    CHECK(error_code_of([&] { broken.infer(f.order(3)); }) == ErrorCode::BackendFailure);
}

TEST_CASE("worker loop keeps FIFO order and dead-letters failures") {
    Fixture f;
    WorkerOptions opts;
    opts.dead_letter_log = f.dir / "dead.jsonl";
    PredictWorker w("w", *f.store, reference_loader(), f.reports, opts);
    w.start();
    for (int i = 1; i <= 20; ++i) w.sink()->send(f.order(i, i == 7 ? 5 : 8));
    w.stop();

    const auto got = f.reports->items();
    REQUIRE(got.size() == 19);
    std::int64_t last = 0;
    for (const auto& r : got) {
        CHECK(r.order_id.value > last);
        last = r.order_id.value;
    }
    CHECK(w.processed() == 19);
    const auto dropped = w.dropped();
    REQUIRE(dropped.size() == 1);
    CHECK(dropped[0].order_id == OrderId{7});
    CHECK(dropped[0].reason == ErrorCode::ShapeMismatch);

    std::ifstream in(opts.dead_letter_log);
    std::string line;
    REQUIRE(std::getline(in, line));
    const auto j = nlohmann::json::parse(line);
    CHECK(j["order_id"] == 7);
    CHECK(j["reason"] == "ShapeMismatch");
}
