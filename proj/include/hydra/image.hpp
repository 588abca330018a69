#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace hydra {

/// Row-major image with interleaved channels; sample values are in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t index(int x, int y, int c = 0) const noexcept {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    float at(int x, int y, int c = 0) const noexcept { return data[index(x, y, c)]; }
    float& at(int x, int y, int c = 0) noexcept { return data[index(x, y, c)]; }

    bool same_shape(const Image& o) const noexcept {
        return width == o.width && height == o.height && channels == o.channels;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

// Decoding normalizes integer samples by the format's max value. The format is
// chosen from the extension: .png, .ppm, .pgm.
Image read_image(const std::filesystem::path& path);
Image decode_pnm(std::span<const std::uint8_t> bytes);
Image decode_png(std::span<const std::uint8_t> bytes);

// Encoders quantize to 8 bits (round to nearest, clamped).
std::vector<std::uint8_t> encode_pnm(const Image& image);
std::vector<std::uint8_t> encode_png(const Image& image);
/// Creates missing parent directories.
void write_image(const std::filesystem::path& path, const Image& image);

/// Bilinear resampling with corner-aligned sample positions: output pixel x maps
/// to source coordinate x * (src_w - 1) / (dst_w - 1). Same-size input is copied.
Image resize_bilinear(const Image& src, int target_width, int target_height);

/// Converts between 1 and 3 channels. RGB to gray uses 0.299/0.587/0.114
/// luminance weights; gray to RGB replicates the sample.
Image convert_channels(const Image& src, int channels);

} // namespace hydra
