#include "support.hpp"

#include "hydra/feeder.hpp"
#include "hydra/naming.hpp"

#include <fstream>

using namespace hydra;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    std::unique_ptr<Store> store = make_memory_store();
    test::TempDir dir{"feeder"};
    PlotType pt = store->register_plot_type(test::occupancy_spec(8));
    ModelRecord model = test::add_reference_model(*store, pt, dir / "m.hydm");

    Fixture() {
        fs::create_directories(dir / "in");
        fs::create_directories(dir / "reject");
    }

    FeederOptions options() const {
        FeederOptions o;
        o.input_dir = dir / "in";
        o.reject_dir = dir / "reject";
        o.image_root = dir / "images";
        o.clock = [] { return UtcMillis{777}; };
        return o;
    }

    std::string drop(std::int64_t seq, UtcMillis t, int size = 16, int channels = 1) const {
        const std::string name = format_filename({"occupancy", 1, seq, t, channels == 1 ? "pgm" : "ppm"});
        write_image(dir / "in" / name, Image(size, size, channels, 0.25f));
        return name;
    }
};

std::vector<InferenceOrder> scan_twice(Feeder& f) {
    auto first = f.scan_and_emit();
    CHECK(first.empty());
    return f.scan_and_emit();
}

} // namespace

TEST_CASE("files are emitted once stable, in capture order") {
    Fixture f;
    const auto late = f.drop(1, 3000);
    const auto early = f.drop(2, 1000);
    const auto mid = f.drop(3, 2000);
    auto sink = std::make_shared<test::Collector<InferenceOrder>>();
    Feeder feeder(*f.store, f.options(), sink);
    const auto orders = scan_twice(feeder);
    REQUIRE(orders.size() == 3);
    CHECK(sink->size() == 3);

    std::vector<std::int64_t> seqs;
    for (const auto& o : orders) {
        const auto img = f.store->image(o.image);
        seqs.push_back(img.sequence);
        CHECK(o.order_id.value == o.image.value);
        CHECK(o.created_at == 777);
        CHECK(o.payload.width == 8);
        CHECK(o.payload.height == 8);
        CHECK(o.payload.at(3, 3) == doctest::Approx(64.0 / 255.0));
        REQUIRE(o.stage_timings.size() == 1);
        CHECK(o.stage_timings[0].stage == "feeder");
        CHECK(fs::exists(f.dir / "images" / img.storage_path));
    }
    CHECK(seqs == std::vector<std::int64_t>{2, 3, 1});
    CHECK(feeder.processed(late));
    CHECK(fs::is_empty(f.dir / "in"));
    CHECK(feeder.scan_and_emit().empty());
}

TEST_CASE("a restarted feeder does not re-emit processed files") {
    Fixture f;
    const auto name = f.drop(1, 1000);
    {
        Feeder feeder(*f.store, f.options());
        CHECK(scan_twice(feeder).size() == 1);
    }
    fs::copy_file(f.dir / "images" / "occupancy" / name, f.dir / "in" / name);
    Feeder again(*f.store, f.options());
    CHECK(again.processed(name));
    CHECK(scan_twice(again).empty());
    REQUIRE(again.rejected().size() == 1);
    CHECK(again.rejected()[0].reason == ErrorCode::DuplicateImage);
    CHECK(fs::exists(f.dir / "reject" / name));
    CHECK(fs::exists(f.dir / "reject" / (name + ".reason")));
}

TEST_CASE("bad files are rejected without stopping the scan") {
    Fixture f;
    f.drop(1, 1000);
    f.drop(2, 2000, 12, 3);
    std::ofstream(f.dir / "in" / "notes.txt") << "hello";
    std::ofstream(f.dir / "in" / format_filename({"occupancy", 1, 3, 3000, "pgm"})) << "P5 junk";
    std::ofstream(f.dir / "in" / format_filename({"timing", 1, 4, 4000, "pgm"})) << "P5 junk";
    Feeder feeder(*f.store, f.options());
    const auto orders = scan_twice(feeder);
    REQUIRE(orders.size() == 2);
    CHECK(orders[1].payload.channels == 1);

    std::map<ErrorCode, int> reasons;
    for (const auto& r : feeder.rejected()) ++reasons[r.reason];
    CHECK(reasons[ErrorCode::MalformedName] == 1);
    CHECK(reasons[ErrorCode::ImageDecode] == 1);
    CHECK(reasons[ErrorCode::UnknownPlotType] == 1);
    CHECK(fs::exists(f.dir / "reject" / "notes.txt"));
}

TEST_CASE("files are rejected while the plot type has no active model") {
    test::TempDir dir("feeder-nomodel");
    auto store = make_memory_store();
    store->register_plot_type(test::occupancy_spec(8));
    fs::create_directories(dir / "in");
    write_image(dir / "in" / format_filename({"occupancy", 1, 1, 1, "pgm"}), Image(8, 8, 1));
    FeederOptions o;
    o.input_dir = dir / "in";
    o.reject_dir = dir / "reject";
    o.image_root = dir / "images";
    Feeder feeder(*store, o);
    CHECK(scan_twice(feeder).empty());
    REQUIRE(feeder.rejected().size() == 1);
    CHECK(feeder.rejected()[0].reason == ErrorCode::NoActiveModel);
}

TEST_CASE("a file still growing is not taken") {
    Fixture f;
    const auto name = f.drop(1, 1000);
    Feeder feeder(*f.store, f.options());
    CHECK(feeder.scan_and_emit().empty());
    std::ofstream(f.dir / "in" / name, std::ios::app) << "\n";
    CHECK(feeder.scan_and_emit().empty());
    CHECK(feeder.scan_and_emit().size() == 1);
}
