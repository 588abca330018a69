#include "support.hpp"

#include "hydra/naming.hpp"

#include <random>

using namespace hydra;
using hydra::test::error_code_of;

TEST_CASE("parse_filename examples") {
    const auto f = parse_filename("occupancy_r1001_s7_t1700000000000.png");
    CHECK(f.plot_type_name == "occupancy");
    CHECK(f.run_number == 1001);
    CHECK(f.sequence == 7);
    CHECK(f.capture_time_ms == 1700000000000);
    CHECK(f.extension == "png");

    // Plot type names may contain underscores; fields are taken from the right.
    const auto g = parse_filename("hit_map_2_r0_s0_t0.pgm");
    CHECK(g.plot_type_name == "hit_map_2");
    CHECK(g.run_number == 0);
}

TEST_CASE("parse_filename rejects malformed names") {
    for (const char* bad : {"occupancy_r1001.png", "occupancy_r1001_s7_t17.jpg", "occupancy_rx_s7_t17.png",
                            "occupancy_r01_s7_t17.png", "occupancy_r1_s-7_t17.png", "_r1_s7_t17.png",
                            "occupancy_r1_s7_t17", "occupancy_r1_s7_t17.PNG", "dir/occupancy_r1_s7_t17.png",
                            "occupancy_r1_s7_t99999999999999999999.png", "occupancy_s7_r1_t17.png"}) {
        CAPTURE(bad);
        CHECK(error_code_of([&] { parse_filename(bad); }) == ErrorCode::MalformedName);
    }
}

TEST_CASE("format and parse round-trip over random valid names") {
    std::mt19937_64 rng(2024);
    const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789_-";
    const char* exts[] = {"png", "ppm", "pgm"};
    for (int i = 0; i < 1000; ++i) {
        FileNameFields f;
        const int len = 1 + static_cast<int>(rng() % 12);
        for (int k = 0; k < len; ++k) f.plot_type_name += alphabet[rng() % alphabet.size()];
        f.run_number = static_cast<std::int64_t>(rng() % 1000000);
        f.sequence = static_cast<std::int64_t>(rng() % 100000);
        f.capture_time_ms = static_cast<std::int64_t>(rng() >> 20);
        f.extension = exts[rng() % 3];
        const std::string name = format_filename(f);
        CAPTURE(name);
        REQUIRE(parse_filename(name) == f);
        CHECK(format_filename(parse_filename(name)) == name);
    }
}
