#include "support.hpp"

#include "hydra/api.hpp"
#include "hydra/keeper.hpp"

#include <httplib.h>
#include <json.hpp>

#include <thread>

using namespace hydra;
using json = nlohmann::json;

namespace {

constexpr UtcMillis kNow = 10'000'000;

struct Fixture {
    std::unique_ptr<Store> store = make_memory_store();
    AlarmBus alarms;
    test::TempDir dir{"api"};
    PlotType pt = store->register_plot_type(test::occupancy_spec(8));
    ModelRecord model = test::add_reference_model(*store, pt, dir / "models" / "m.hydm");
    ApiService api{*store, alarms, config()};
    std::vector<ImageId> images;

    ApiConfig config() const {
        ApiConfig c;
        c.image_root = dir / "images";
        c.heatmap_dir = dir / "heatmaps";
        c.model_root = dir / "models";
        c.alarm_wait = std::chrono::milliseconds(200);
        c.clock = [] { return kNow; };
        return c;
    }

    Fixture() {
        for (int i = 0; i < 3; ++i) {
            const auto img = test::add_test_image(*store, pt.id, i, 1000 + i);
            write_image(dir / "images" / img.storage_path, Image(16, 16, 1, 0.1f * static_cast<float>(i + 1)));
            store->mark_collected(img.id, CollectReason::BadClass);
            images.push_back(img.id);

            RunHistoryEntry e;
            e.inference_id = InferenceId{img.id.value};
            e.image = img.id;
            e.model = model.id;
            e.output_weights = {0.2, 0.7, 0.1};
            e.classification = pt.labels[1].id;
            e.confirmed = true;
            e.inferred_at = kNow - 1000 + i;
            e.stage_timings = {{"feeder", 1e-3}, {"predict", 1e-2}};
            store->record_inference(e);
            store->upsert_runtime({e.inference_id, img.id, pt.id, img.storage_path,
                                   i == 0 ? std::optional<std::string>("h") : std::nullopt, e.classification, true,
                                   e.inferred_at},
                                  kNow);
        }
        write_image(heatmap_path(dir / "heatmaps", InferenceId{images[0].value}), Image(8, 8, 1, 0.5f));
    }

    ApiResponse call(std::string method, std::string path, std::map<std::string, std::string> params = {},
                     std::string body = {}, std::string user = {}) {
        ApiRequest r;
        r.method = std::move(method);
        r.path = std::move(path);
        r.params = std::move(params);
        r.body = std::move(body);
        if (!user.empty()) r.headers["x-hydra-user"] = user;
        return api.handle(r);
    }

    json get(std::string path, std::map<std::string, std::string> params = {}) {
        const auto r = call("GET", std::move(path), std::move(params));
        CHECK(r.status == 200);
        return json::parse(r.body);
    }
};

std::string error_name(const ApiResponse& r) { return json::parse(r.body).at("error"); }

} // namespace

TEST_CASE("plot types, labels and config") {
    Fixture f;
    const auto pts = f.get("/plot-types");
    REQUIRE(pts.size() == 1);
    CHECK(pts[0]["name"] == "occupancy");
    CHECK(f.get("/labels", {{"plot_type", "occupancy"}}).size() == 3);
    CHECK(f.get("/labels", {{"plot_type", std::to_string(f.pt.id.value)}})[1]["name"] == "DeadRegion");
    CHECK(f.get("/config")["retention_ms"] == 300000);

    const auto missing = f.call("GET", "/labels", {{"plot_type", "nope"}});
    CHECK(missing.status == 404);
    CHECK(error_name(missing) == "UnknownEntity");
    CHECK(f.call("GET", "/labels").status == 400);
    CHECK(f.call("GET", "/nowhere").status == 404);
}

TEST_CASE("labeling through the API shrinks the unlabeled queue") {
    Fixture f;
    auto unlabeled = f.get("/unlabeled", {{"plot_type", "occupancy"}});
    REQUIRE(unlabeled.size() == 3);
    CHECK(unlabeled[0]["collect_reason"] == "BadClass");
    CHECK(f.get("/unlabeled", {{"plot_type", "occupancy"}, {"limit", "2"}}).size() == 2);

    const json body = {{"image_id", f.images[0].value}, {"label_id", f.pt.labels[0].id.value}};
    CHECK(f.call("POST", "/labels", {}, body.dump(), "mallory").status == 403);
    const auto ok = f.call("POST", "/labels", {}, body.dump(), "alice");
    CHECK(ok.status == 200);
    CHECK(json::parse(ok.body)["labeler"] == "alice");
    CHECK(f.get("/unlabeled", {{"plot_type", "occupancy"}}).size() == 2);

    json with_user = body;
    with_user["user"] = "alice";
    CHECK(f.call("POST", "/labels", {}, with_user.dump()).status == 200);
    with_user["user"] = "bob";
    CHECK(f.call("POST", "/labels", {}, with_user.dump(), "alice").status == 403);
    CHECK(f.call("POST", "/labels", {}, "{not json", "alice").status == 400);

    const auto labeled = f.get("/labeled", {{"plot_type", "occupancy"}, {"label", "Good"}});
    REQUIRE(labeled.size() == 1);
    CHECK(labeled[0]["label"]["labeler"] == "alice");
    CHECK(f.get("/labeled", {{"plot_type", "occupancy"}, {"label", "DeadRegion"}}).empty());
    CHECK(f.call("GET", "/labeled", {{"plot_type", "occupancy"}, {"label", "Nope"}}).status == 404);
}

TEST_CASE("models, thresholds and activation") {
    Fixture f;
    const auto models = f.get("/models", {{"plot_type", "occupancy"}});
    REQUIRE(models.size() == 1);
    CHECK(models[0]["active"] == true);

    const std::string base = "/models/" + std::to_string(f.model.id.value);
    const json rows = {{"thresholds", {{{"label_id", f.pt.labels[1].id.value}, {"threshold", 0.4}}}}};
    CHECK(f.call("PUT", base + "/thresholds", {}, rows.dump()).status == 403);
    const auto put = f.call("PUT", base + "/thresholds", {}, rows.dump(), "alice");
    CHECK(put.status == 200);
    CHECK(f.store->threshold_map(f.model.id).at(f.pt.labels[1].id) == 0.4);

    const json too_big = json::array({{{"label_id", f.pt.labels[1].id.value}, {"threshold", 1.2}}});
    const auto bad = f.call("PUT", base + "/thresholds", {}, too_big.dump(), "alice");
    CHECK(bad.status == 400);
    CHECK(error_name(bad) == "Validation");
    CHECK(f.store->threshold_map(f.model.id).at(f.pt.labels[1].id) == 0.4);
    CHECK(f.get(base + "/thresholds").size() == 3);

    const auto second = test::add_reference_model(*f.store, f.pt, f.dir / "models" / "m2.hydm");
    const auto act = f.call("POST", base + "/activate", {}, {}, "alice");
    CHECK(act.status == 200);
    CHECK(json::parse(act.body)["previous"] == second.id.value);
    CHECK(f.store->active_model(f.pt.id)->id == f.model.id);
    CHECK(f.call("POST", "/models/999/activate", {}, {}, "alice").status == 404);
}

TEST_CASE("ECM over labeled images") {
    Fixture f;
    const std::string path = "/models/" + std::to_string(f.model.id.value) + "/ecm";
    f.store->assign_label(f.images[0], f.pt.labels[0].id, "alice", 1);
    f.store->assign_label(f.images[1], f.pt.labels[1].id, "alice", 1);
    const auto ecm = f.get(path);
    CHECK(ecm["total"] == 2);
    CHECK(ecm["cells"].size() == 3);
}

TEST_CASE("live view, images and heatmaps") {
    Fixture f;
    const auto live = f.get("/run/live", {{"plot_type", "occupancy"}});
    REQUIRE(live.size() == 3);
    CHECK(live[0]["inference_id"] == f.images[2].value);
    CHECK(live[2]["heatmap_url"] == "/heatmaps/" + std::to_string(f.images[0].value));
    CHECK(live[0]["severity"] == "Bad");

    const auto img = f.call("GET", "/images/" + std::to_string(f.images[1].value));
    CHECK(img.status == 200);
    CHECK(img.content_type == "image/x-portable-graymap");
    const auto png = f.call("GET", "/images/" + std::to_string(f.images[1].value), {{"format", "png"}});
    CHECK(png.content_type == "image/png");
    CHECK(png.body.substr(1, 3) == "PNG");

    CHECK(f.call("GET", "/heatmaps/" + std::to_string(f.images[0].value)).status == 200);
    CHECK(f.call("GET", "/heatmaps/" + std::to_string(f.images[1].value)).status == 404);
    CHECK(f.call("GET", "/images/4242").status == 404);
}

TEST_CASE("status, log and series") {
    Fixture f;
    const auto status = f.get("/status", {{"window", "60000"}});
    CHECK(status["to"] == kNow);
    CHECK(status["bucket_edges"].size() == 25);
    REQUIRE(status["histograms"].size() == 2);
    CHECK(status["histograms"][0]["stage"] == "feeder");
    CHECK(status["histograms"][0]["total"] == 3);
    CHECK(f.call("GET", "/status", {{"window", "-5"}}).status == 400);

    const auto log = f.get("/log");
    REQUIRE(log["entries"].size() == 3);
    CHECK(log["entries"][2]["heatmap_url"].is_string());

    const auto series = f.get("/series", {{"plot_type", "occupancy"}, {"from", "0"}, {"to", std::to_string(kNow)}});
    CHECK(series["series"]["DeadRegion"].size() == 3);
    CHECK(series["series"]["DeadRegion"][0][1] == 0.7);
}

TEST_CASE("alarm long-poll") {
    Fixture f;
    CHECK(f.get("/alarms/stream", {{"timeout_ms", "0"}})["events"].empty());
    std::thread raise([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        f.alarms.publish({0, InferenceId{1}, f.pt.id, f.images[0], f.pt.labels[1].id, AlarmKind::ConfirmedBad, kNow});
    });
    const auto got = f.get("/alarms/stream", {{"after", "0"}});
    raise.join();
    REQUIRE(got["events"].size() == 1);
    CHECK(got["events"][0]["kind"] == "ConfirmedBad");
    CHECK(got["last_sequence"] == 1);
    CHECK(f.get("/alarms/stream", {{"after", "1"}, {"timeout_ms", "10"}})["events"].empty());
}

TEST_CASE("HTTP round trip") {
    Fixture f;
    const int port = f.api.bind_any_port();
    REQUIRE(port > 0);
    std::thread server([&] { f.api.listen_after_bind(); });
    httplib::Client client("127.0.0.1", port);
    const auto res = client.Get("/labels?plot_type=occupancy");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body).size() == 3);

    const json body = {{"image_id", f.images[2].value}, {"label_id", f.pt.labels[0].id.value}};
    const auto post = client.Post("/labels", httplib::Headers{{"X-Hydra-User", "alice"}}, body.dump(), "application/json");
    REQUIRE(post);
    CHECK(post->status == 200);
    const auto denied = client.Post("/labels", httplib::Headers{{"X-Hydra-User", "eve"}}, body.dump(), "application/json");
    REQUIRE(denied);
    CHECK(denied->status == 403);
    f.api.stop();
    server.join();
}
