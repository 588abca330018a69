#include "hydra/messages.hpp"

#include "hydra/error.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace hydra {
namespace {

class Writer {
public:
    Writer() { out_.resize(4); }

    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

    std::vector<std::uint8_t> finish() {
        const auto body = static_cast<std::uint32_t>(out_.size() - 4);
        for (int i = 0; i < 4; ++i) out_[i] = static_cast<std::uint8_t>(body >> (8 * i));
        return std::move(out_);
    }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> frame) : data_(frame) {
        const std::uint32_t body = u32();
        if (body != data_.size() - 4) throw Error(ErrorCode::MalformedFrame, "length prefix does not match frame");
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw Error(ErrorCode::MalformedFrame, "frame truncated");
    }
    void expect_end() const {
        if (pos_ != data_.size()) throw Error(ErrorCode::MalformedFrame, "trailing bytes in frame");
    }

private:
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

void write_timings(Writer& w, const StageTimings& timings) {
    w.u32(static_cast<std::uint32_t>(timings.size()));
    for (const auto& t : timings) {
        if (t.stage.size() > 0xffff) throw Error(ErrorCode::Validation, "stage name too long");
        w.u16(static_cast<std::uint16_t>(t.stage.size()));
        w.bytes(t.stage);
        w.f64(t.seconds);
    }
}

StageTimings read_timings(Reader& r) {
    const std::uint32_t n = r.u32();
    r.need(static_cast<std::size_t>(n) * 10);
    StageTimings out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        StageTiming t;
        t.stage = r.bytes(r.u16());
        t.seconds = r.f64();
        out.push_back(std::move(t));
    }
    return out;
}

Image read_payload(Reader& r) {
    const std::uint32_t w = r.u32(), h = r.u32();
    const auto channels = static_cast<int>(r.u32());
    if (w > 65535 || h > 65535 || channels < 1 || channels > 4)
        throw Error(ErrorCode::MalformedFrame, "implausible payload dimensions");
    Image img(static_cast<int>(w), static_cast<int>(h), channels);
    r.need(img.data.size() * 4);
    for (auto& v : img.data) v = r.f32();
    return img;
}

} // namespace

std::vector<std::uint8_t> encode_order(const InferenceOrder& o) {
    Writer w;
    w.u64(static_cast<std::uint64_t>(o.order_id.value));
    w.u64(static_cast<std::uint64_t>(o.image.value));
    w.u64(static_cast<std::uint64_t>(o.plot_type.value));
    w.i64(o.created_at);
    write_timings(w, o.stage_timings);
    w.u32(static_cast<std::uint32_t>(o.payload.width));
    w.u32(static_cast<std::uint32_t>(o.payload.height));
    w.u32(static_cast<std::uint32_t>(o.payload.channels));
    for (float v : o.payload.data) w.f32(v);
    return w.finish();
}

InferenceOrder decode_order(std::span<const std::uint8_t> frame) {
    Reader r(frame);
    InferenceOrder o;
    o.order_id = OrderId{static_cast<std::int64_t>(r.u64())};
    o.image = ImageId{static_cast<std::int64_t>(r.u64())};
    o.plot_type = PlotTypeId{static_cast<std::int64_t>(r.u64())};
    o.created_at = r.i64();
    o.stage_timings = read_timings(r);
    o.payload = read_payload(r);
    r.expect_end();
    return o;
}

std::vector<std::uint8_t> encode_report(const Report& rep) {
    Writer w;
    w.u64(static_cast<std::uint64_t>(rep.order_id.value));
    w.u64(static_cast<std::uint64_t>(rep.image.value));
    w.u64(static_cast<std::uint64_t>(rep.model.value));
    w.u64(static_cast<std::uint64_t>(rep.plot_type.value));
    w.i64(rep.inferred_at);
    w.u64(static_cast<std::uint64_t>(rep.classification.value));
    write_timings(w, rep.stage_timings);
    w.u32(static_cast<std::uint32_t>(rep.output_weights.size()));
    for (double v : rep.output_weights) w.f64(v);
    w.u8(rep.gradcam ? 1 : 0);
    if (rep.gradcam) {
        w.u32(static_cast<std::uint32_t>(rep.gradcam->width));
        w.u32(static_cast<std::uint32_t>(rep.gradcam->height));
        for (double v : rep.gradcam->values) w.f64(v);
    }
    return w.finish();
}

Report decode_report(std::span<const std::uint8_t> frame) {
    Reader r(frame);
    Report rep;
    rep.order_id = OrderId{static_cast<std::int64_t>(r.u64())};
    rep.image = ImageId{static_cast<std::int64_t>(r.u64())};
    rep.model = ModelId{static_cast<std::int64_t>(r.u64())};
    rep.plot_type = PlotTypeId{static_cast<std::int64_t>(r.u64())};
    rep.inferred_at = r.i64();
    rep.classification = LabelId{static_cast<std::int64_t>(r.u64())};
    rep.stage_timings = read_timings(r);
    const std::uint32_t n = r.u32();
    r.need(static_cast<std::size_t>(n) * 8);
    rep.output_weights.resize(n);
    for (auto& v : rep.output_weights) v = r.f64();
    const std::uint8_t has_heatmap = r.u8();
    if (has_heatmap > 1) throw Error(ErrorCode::MalformedFrame, "bad heatmap flag");
    if (has_heatmap) {
        GradCamMap map;
        map.width = static_cast<int>(r.u32());
        map.height = static_cast<int>(r.u32());
        if (map.width < 0 || map.height < 0 || map.width > 65535 || map.height > 65535)
            throw Error(ErrorCode::MalformedFrame, "implausible heatmap dimensions");
        const std::size_t n = static_cast<std::size_t>(map.width) * static_cast<std::size_t>(map.height);
        r.need(n * 8);
        map.values.resize(n);
        for (auto& v : map.values) v = r.f64();
        rep.gradcam = std::move(map);
    }
    r.expect_end();
    return rep;
}

std::optional<std::vector<std::uint8_t>> read_frame(std::istream& in) {
    std::uint8_t prefix[4];
    in.read(reinterpret_cast<char*>(prefix), 4);
    if (in.gcount() == 0) return std::nullopt;
    if (in.gcount() != 4) throw Error(ErrorCode::MalformedFrame, "truncated length prefix");
    const std::uint32_t body = prefix[0] | (prefix[1] << 8) | (prefix[2] << 16) | (std::uint32_t(prefix[3]) << 24);
    std::vector<std::uint8_t> frame(4 + static_cast<std::size_t>(body));
    std::memcpy(frame.data(), prefix, 4);
    in.read(reinterpret_cast<char*>(frame.data() + 4), body);
    if (static_cast<std::uint32_t>(in.gcount()) != body) throw Error(ErrorCode::MalformedFrame, "truncated frame body");
    return frame;
}

bool OrderFrameSink::send(InferenceOrder order) {
    const auto frame = encode_order(order);
    out_.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
    out_.flush();
    return static_cast<bool>(out_);
}

} // namespace hydra
