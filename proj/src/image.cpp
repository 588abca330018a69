#include "hydra/image.hpp"

#include "hydra/error.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace hydra {
namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint8_t quantize(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::string lower_ext(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

// Header tokenizer for binary and ASCII netpbm; skips whitespace and comments.
class PnmReader {
public:
    explicit PnmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::string token() {
        skip_space();
        std::string out;
        while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_]) && bytes_[pos_] != '#')
            out.push_back(static_cast<char>(bytes_[pos_++]));
        if (out.empty()) throw Error(ErrorCode::ImageDecode, "truncated netpbm header");
        return out;
    }

    long number() {
        const std::string t = token();
        if (!std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); }))
            throw Error(ErrorCode::ImageDecode, "non-numeric netpbm field '" + t + "'");
        return std::stol(t);
    }

    // Exactly one whitespace byte separates the header from binary samples.
    void end_header() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
            throw Error(ErrorCode::ImageDecode, "missing header terminator");
        ++pos_;
    }

    std::span<const std::uint8_t> rest() const { return bytes_.subspan(pos_); }

private:
    void skip_space() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes) {
    PnmReader r(bytes);
    const std::string magic = r.token();
    int channels = 0;
    bool ascii = false;
    if (magic == "P5") channels = 1;
    else if (magic == "P6") channels = 3;
    else if (magic == "P2") channels = 1, ascii = true;
    else if (magic == "P3") channels = 3, ascii = true;
    else throw Error(ErrorCode::ImageDecode, "unsupported netpbm magic '" + magic + "'");

    const long w = r.number(), h = r.number(), maxval = r.number();
    if (w < 1 || h < 1 || w > 65535 || h > 65535) throw Error(ErrorCode::ImageDecode, "bad netpbm dimensions");
    if (maxval < 1 || maxval > 65535) throw Error(ErrorCode::ImageDecode, "bad netpbm maxval");

    Image img(static_cast<int>(w), static_cast<int>(h), channels);
    const float scale = 1.0f / static_cast<float>(maxval);
    if (ascii) {
        for (auto& v : img.data) v = static_cast<float>(std::min(r.number(), maxval)) * scale;
        return img;
    }
    r.end_header();
    const auto samples = r.rest();
    const std::size_t bytes_per = maxval > 255 ? 2 : 1;
    if (samples.size() < img.data.size() * bytes_per) throw Error(ErrorCode::ImageDecode, "truncated netpbm data");
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const unsigned v = bytes_per == 2 ? (unsigned(samples[2 * i]) << 8) | samples[2 * i + 1] : samples[i];
        img.data[i] = static_cast<float>(std::min<long>(v, maxval)) * scale;
    }
    return img;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
        throw Error(ErrorCode::ImageDecode, std::string("png: ") + png.message);
    const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
    png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const int channels = color ? 3 : 1;
    std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr)) {
        png_image_free(&png);
        throw Error(ErrorCode::ImageDecode, std::string("png: ") + png.message);
    }
    Image img(static_cast<int>(png.width), static_cast<int>(png.height), channels);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(raw[i]) / 255.0f;
    return img;
}

Image read_image(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    const auto bytes = slurp(path);
    if (ext == ".png") return decode_png(bytes);
    if (ext == ".pgm" || ext == ".ppm") return decode_pnm(bytes);
    throw Error(ErrorCode::ImageDecode, "unsupported image extension '" + ext + "'");
}

std::vector<std::uint8_t> encode_pnm(const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw Error(ErrorCode::Validation, "pnm needs 1 or 3 channels");
    const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                               std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + image.data.size());
    for (float v : image.data) out.push_back(quantize(v));
    return out;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw Error(ErrorCode::Validation, "png needs 1 or 3 channels");
    std::vector<std::uint8_t> raw(image.data.size());
    std::transform(image.data.begin(), image.data.end(), raw.begin(), quantize);
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, raw.data(), 0, nullptr))
        throw Error(ErrorCode::Io, std::string("png: ") + png.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, raw.data(), 0, nullptr))
        throw Error(ErrorCode::Io, std::string("png: ") + png.message);
    out.resize(size);
    return out;
}

void write_image(const std::filesystem::path& path, const Image& image) {
    const std::string ext = lower_ext(path);
    std::vector<std::uint8_t> bytes;
    if (ext == ".png") {
        bytes = encode_png(image);
    } else if (ext == ".pgm" || ext == ".ppm") {
        if ((ext == ".pgm") != (image.channels == 1))
            throw Error(ErrorCode::Validation, "extension does not match channel count");
        bytes = encode_pnm(image);
    } else {
        throw Error(ErrorCode::Validation, "unsupported image extension '" + ext + "'");
    }
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

Image resize_bilinear(const Image& src, int target_width, int target_height) {
    if (target_width < 1 || target_height < 1) throw Error(ErrorCode::InvalidTarget, "target dimension is zero");
    if (src.width < 1 || src.height < 1) throw Error(ErrorCode::InvalidTarget, "empty source image");
    if (src.width == target_width && src.height == target_height) return src;

    auto coord = [](int i, int src_n, int dst_n) {
        return dst_n == 1 ? 0.0 : static_cast<double>(i) * (src_n - 1) / (dst_n - 1);
    };

    Image out(target_width, target_height, src.channels);
    for (int y = 0; y < target_height; ++y) {
        const double sy = coord(y, src.height, target_height);
        const int y0 = std::min(static_cast<int>(sy), src.height - 1);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double fy = sy - y0;
        for (int x = 0; x < target_width; ++x) {
            const double sx = coord(x, src.width, target_width);
            const int x0 = std::min(static_cast<int>(sx), src.width - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double fx = sx - x0;
            for (int c = 0; c < src.channels; ++c) {
                const double top = src.at(x0, y0, c) * (1.0 - fx) + src.at(x1, y0, c) * fx;
                const double bottom = src.at(x0, y1, c) * (1.0 - fx) + src.at(x1, y1, c) * fx;
                out.at(x, y, c) = static_cast<float>(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    return out;
}

Image convert_channels(const Image& src, int channels) {
    if (channels != 1 && channels != 3) throw Error(ErrorCode::Validation, "channels must be 1 or 3");
    if (src.channels == channels) return src;
    Image out(src.width, src.height, channels);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            if (channels == 1) {
                const double lum = 0.299 * src.at(x, y, 0) + 0.587 * src.at(x, y, 1) + 0.114 * src.at(x, y, 2);
                out.at(x, y) = static_cast<float>(lum);
            } else {
                for (int c = 0; c < 3; ++c) out.at(x, y, c) = src.at(x, y);
            }
        }
    return out;
}

} // namespace hydra
