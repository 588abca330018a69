#include "support.hpp"

#include "hydra/image.hpp"

#include <cmath>
#include <fstream>
#include <string>

using namespace hydra;
using hydra::test::error_code_of;

namespace {

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

Image ramp(int w, int h, int c) {
    Image img(w, h, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k) img.at(x, y, k) = static_cast<float>(((x * 7 + y * 13 + k * 29) % 256) / 255.0);
    return img;
}

} // namespace

TEST_CASE("PNM decoding normalizes by maxval") {
    const auto ascii = decode_pnm(bytes("P2\n# comment\n2 2\n4\n0 1\n2 4\n"));
    CHECK(ascii.width == 2);
    CHECK(ascii.channels == 1);
    CHECK(ascii.at(1, 0) == doctest::Approx(0.25));
    CHECK(ascii.at(1, 1) == 1.0f);

    std::string raw = "P6\n1 1\n255\n";
    raw += static_cast<char>(255);
    raw += static_cast<char>(0);
    raw += static_cast<char>(51);
    const auto rgb = decode_pnm(bytes(raw));
    CHECK(rgb.channels == 3);
    CHECK(rgb.at(0, 0, 2) == doctest::Approx(0.2));

    CHECK(error_code_of([] { decode_pnm(bytes("P5\n2 2\n255\n")); }) == ErrorCode::ImageDecode);
    CHECK(error_code_of([] { decode_pnm(bytes("GIF89a")); }) == ErrorCode::ImageDecode);
}

TEST_CASE("8-bit encoders round-trip quantized images") {
    test::TempDir dir("img");
    for (int c : {1, 3}) {
        const Image img = ramp(9, 5, c);
        for (const char* ext : {"png", c == 1 ? "pgm" : "ppm"}) {
            const auto path = dir / (std::string("x.") + ext);
            write_image(path, img);
            const Image back = read_image(path);
            REQUIRE(back.same_shape(img));
            for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
        }
    }
    CHECK(error_code_of([&] { read_image(dir / "missing.pgm"); }) == ErrorCode::Io);
    std::ofstream(dir / "x.bmp") << "BM";
    CHECK(error_code_of([&] { read_image(dir / "x.bmp"); }) == ErrorCode::ImageDecode);
}

TEST_CASE("resize to the same size is the identity") {
    const Image img = ramp(64, 64, 1);
    CHECK(resize_bilinear(img, 64, 64) == img);
}

TEST_CASE("resizing a constant image gives the same constant") {
    Image img(7, 3, 1, 0.375f);
    const Image out = resize_bilinear(img, 20, 11);
    CHECK(out.width == 20);
    CHECK(out.height == 11);
    for (float v : out.data) CHECK(v == 0.375f);
}

TEST_CASE("corner-aligned bilinear matches the closed form") {
    Image img(2, 2, 1);
    img.at(0, 0) = 0.0f;
    img.at(1, 0) = 1.0f;
    img.at(0, 1) = 0.0f;
    img.at(1, 1) = 1.0f;
    const Image out = resize_bilinear(img, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            // Source column x * (2-1)/(4-1); the value equals that coordinate.
            CHECK(out.at(x, y) == doctest::Approx(x / 3.0));
            if (x > 0) CHECK(out.at(x, y) >= out.at(x - 1, y));
        }

    const Image big = ramp(10, 6, 1);
    const Image small = resize_bilinear(big, 4, 3);
    CHECK(small.at(0, 0) == big.at(0, 0));
    CHECK(small.at(3, 2) == big.at(9, 5));
    // Interior sample (1,1) lands on source (3, 2.5).
    CHECK(small.at(1, 1) == doctest::Approx((big.at(3, 2) + big.at(3, 3)) / 2.0));
    CHECK(error_code_of([&] { resize_bilinear(big, 0, 3); }) == ErrorCode::InvalidTarget);
}

TEST_CASE("channel conversion uses luminance weights") {
    Image rgb(1, 1, 3);
    rgb.at(0, 0, 0) = 1.0f;
    rgb.at(0, 0, 1) = 0.5f;
    rgb.at(0, 0, 2) = 0.25f;
    const Image gray = convert_channels(rgb, 1);
    CHECK(gray.at(0, 0) == doctest::Approx(0.299 + 0.587 * 0.5 + 0.114 * 0.25));
    const Image back = convert_channels(gray, 3);
    CHECK(back.at(0, 0, 2) == gray.at(0, 0));
}
