#include "hydra/classifier.hpp"

#include "hydra/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

namespace hydra {
namespace {

constexpr char kMagic[4] = {'H', 'Y', 'D', 'M'};

double uniform(std::mt19937_64& rng, double lo, double hi) {
    const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class ArtifactReader {
public:
    explicit ArtifactReader(std::span<const std::uint8_t> b) : b_(b) {}
    std::uint64_t uint(int n) {
        if (b_.size() - pos_ < static_cast<std::size_t>(n)) throw Error(ErrorCode::InvalidModel, "artifact truncated");
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    double f64() { return std::bit_cast<double>(uint(8)); }
    void f64s(std::vector<double>& out, std::size_t n) {
        if ((b_.size() - pos_) / 8 < n) throw Error(ErrorCode::InvalidModel, "artifact truncated");
        out.resize(n);
        for (auto& v : out) v = f64();
    }
    bool done() const { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) return {};
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - top);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

ReferenceClassifier ReferenceClassifier::initialize(PlotTypeId plot_type, std::vector<LabelId> label_order,
                                                    int channels, int kernels, std::uint64_t seed) {
    if (label_order.size() < 2) throw Error(ErrorCode::InvalidModel, "need at least two labels");
    if (kernels < 1) throw Error(ErrorCode::InvalidModel, "need at least one kernel");
    if (channels != 1 && channels != 3) throw Error(ErrorCode::InvalidModel, "channels must be 1 or 3");

    ReferenceClassifier m;
    m.plot_type_ = plot_type;
    m.label_order_ = std::move(label_order);
    m.kernels_ = kernels;
    m.channels_ = channels;
    const auto labels = m.label_order_.size();
    std::mt19937_64 rng(seed);
    m.kernel_.resize(static_cast<std::size_t>(kernels) * channels * 9);
    for (auto& w : m.kernel_) w = uniform(rng, -0.5, 0.5);
    m.kernel_bias_.resize(static_cast<std::size_t>(kernels));
    for (auto& b : m.kernel_bias_) b = uniform(rng, -0.1, 0.1);
    const double dense_scale = 1.0 / std::sqrt(static_cast<double>(kernels));
    m.dense_.resize(labels * static_cast<std::size_t>(kernels));
    for (auto& w : m.dense_) w = uniform(rng, -dense_scale, dense_scale);
    m.dense_bias_.assign(labels, 0.0);
    return m;
}

ForwardResult ReferenceClassifier::forward(const Image& payload) const {
    if (payload.channels != channels_)
        throw Error(ErrorCode::ShapeMismatch, "payload has " + std::to_string(payload.channels) +
                                                  " channels, model expects " + std::to_string(channels_));
    if (payload.width < 3 || payload.height < 3) throw Error(ErrorCode::ShapeMismatch, "payload smaller than 3x3");

    const int ow = payload.width - 2, oh = payload.height - 2;
    const double positions = static_cast<double>(ow) * oh;
    ForwardResult out;
    std::vector<double> pooled(static_cast<std::size_t>(kernels_), 0.0);
    out.feature_maps.reserve(static_cast<std::size_t>(kernels_));
    for (int k = 0; k < kernels_; ++k) {
        FeatureMap fm{ow, oh, std::vector<double>(static_cast<std::size_t>(ow) * oh)};
        double sum = 0.0;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double pre = kernel_bias_[static_cast<std::size_t>(k)];
                for (int c = 0; c < channels_; ++c)
                    for (int r = 0; r < 3; ++r)
                        for (int q = 0; q < 3; ++q) pre += kernel(k, c, r, q) * payload.at(x + q, y + r, c);
                const double a = pre > 0.0 ? pre : 0.0;
                fm.values[static_cast<std::size_t>(y) * ow + x] = a;
                sum += a;
            }
        pooled[static_cast<std::size_t>(k)] = sum / positions;
        out.feature_maps.push_back(std::move(fm));
    }
    const std::size_t labels = label_order_.size();
    out.logits.assign(labels, 0.0);
    for (std::size_t l = 0; l < labels; ++l) {
        double z = dense_bias_[l];
        for (int k = 0; k < kernels_; ++k) z += dense_[l * kernels_ + k] * pooled[static_cast<std::size_t>(k)];
        out.logits[l] = z;
    }
    return out;
}

std::vector<FeatureMap> ReferenceClassifier::score_gradients(const ForwardResult& fwd, std::size_t class_index) const {
    if (class_index >= label_order_.size()) throw Error(ErrorCode::Validation, "class index out of range");
    std::vector<FeatureMap> grads;
    grads.reserve(fwd.feature_maps.size());
    for (std::size_t k = 0; k < fwd.feature_maps.size(); ++k) {
        const auto& fm = fwd.feature_maps[k];
        const double positions = static_cast<double>(fm.width) * fm.height;
        grads.push_back({fm.width, fm.height,
                         std::vector<double>(fm.values.size(), dense_[class_index * kernels_ + k] / positions)});
    }
    return grads;
}

double ReferenceClassifier::loss(std::span<const Image> images, std::span<const std::size_t> targets,
                                 std::vector<double>* gradient) const {
    if (images.size() != targets.size()) throw Error(ErrorCode::Validation, "images/targets length mismatch");
    if (images.empty()) throw Error(ErrorCode::EmptyTrainingSet, "empty batch");
    const std::size_t labels = label_order_.size();
    const std::size_t K = static_cast<std::size_t>(kernels_);
    const std::size_t kernel_size = static_cast<std::size_t>(channels_) * 9;

    std::vector<double> g_kernel, g_kbias, g_dense, g_dbias;
    if (gradient) {
        g_kernel.assign(kernel_.size(), 0.0);
        g_kbias.assign(K, 0.0);
        g_dense.assign(dense_.size(), 0.0);
        g_dbias.assign(labels, 0.0);
    }

    double total = 0.0;
    std::vector<double> pooled(K), dz(labels), patch_sum(K * kernel_size), active_count(K);
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = images[n];
        if (img.channels != channels_) throw Error(ErrorCode::ShapeMismatch, "training image channel mismatch");
        if (targets[n] >= labels) throw Error(ErrorCode::Validation, "target index out of range");
        const int ow = img.width - 2, oh = img.height - 2;
        const double positions = static_cast<double>(ow) * oh;

        std::fill(pooled.begin(), pooled.end(), 0.0);
        std::fill(patch_sum.begin(), patch_sum.end(), 0.0);
        std::fill(active_count.begin(), active_count.end(), 0.0);
        double patch[27];
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                std::size_t p = 0;
                for (int c = 0; c < channels_; ++c)
                    for (int r = 0; r < 3; ++r)
                        for (int q = 0; q < 3; ++q) patch[p++] = img.at(x + q, y + r, c);
                for (std::size_t k = 0; k < K; ++k) {
                    const double* w = &kernel_[k * kernel_size];
                    double pre = kernel_bias_[k];
                    for (std::size_t i = 0; i < kernel_size; ++i) pre += w[i] * patch[i];
                    if (pre > 0.0) {
                        pooled[k] += pre;
                        if (gradient) {
                            double* s = &patch_sum[k * kernel_size];
                            for (std::size_t i = 0; i < kernel_size; ++i) s[i] += patch[i];
                            active_count[k] += 1.0;
                        }
                    }
                }
            }
        for (auto& v : pooled) v /= positions;

        std::vector<double> logits(labels);
        for (std::size_t l = 0; l < labels; ++l) {
            double z = dense_bias_[l];
            for (std::size_t k = 0; k < K; ++k) z += dense_[l * K + k] * pooled[k];
            logits[l] = z;
        }
        const double top = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (double z : logits) denom += std::exp(z - top);
        total += (top + std::log(denom)) - logits[targets[n]];

        if (!gradient) continue;
        for (std::size_t l = 0; l < labels; ++l)
            dz[l] = std::exp(logits[l] - top) / denom - (l == targets[n] ? 1.0 : 0.0);
        for (std::size_t l = 0; l < labels; ++l) {
            g_dbias[l] += dz[l];
            for (std::size_t k = 0; k < K; ++k) g_dense[l * K + k] += dz[l] * pooled[k];
        }
        for (std::size_t k = 0; k < K; ++k) {
            double d_pooled = 0.0;
            for (std::size_t l = 0; l < labels; ++l) d_pooled += dz[l] * dense_[l * K + k];
            const double per_position = d_pooled / positions;
            g_kbias[k] += per_position * active_count[k];
            for (std::size_t i = 0; i < kernel_size; ++i)
                g_kernel[k * kernel_size + i] += per_position * patch_sum[k * kernel_size + i];
        }
    }

    const double scale = 1.0 / static_cast<double>(images.size());
    if (gradient) {
        gradient->clear();
        gradient->reserve(parameter_count());
        for (auto* part : {&g_kernel, &g_kbias, &g_dense, &g_dbias})
            for (double v : *part) gradient->push_back(v * scale);
    }
    return total * scale;
}

std::size_t ReferenceClassifier::parameter_count() const {
    return kernel_.size() + kernel_bias_.size() + dense_.size() + dense_bias_.size();
}

std::vector<double> ReferenceClassifier::parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto* part : {&kernel_, &kernel_bias_, &dense_, &dense_bias_}) out.insert(out.end(), part->begin(), part->end());
    return out;
}

void ReferenceClassifier::set_parameters(std::span<const double> values) {
    if (values.size() != parameter_count()) throw Error(ErrorCode::Validation, "parameter count mismatch");
    auto it = values.begin();
    for (auto* part : {&kernel_, &kernel_bias_, &dense_, &dense_bias_}) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(part->size()), part->begin());
        it += static_cast<std::ptrdiff_t>(part->size());
    }
}

std::vector<std::uint8_t> ReferenceClassifier::serialize() const {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kFormatVersion);
    put_u64(out, static_cast<std::uint64_t>(plot_type_.value));
    put_u32(out, static_cast<std::uint32_t>(label_order_.size()));
    for (LabelId l : label_order_) put_u64(out, static_cast<std::uint64_t>(l.value));
    put_u32(out, static_cast<std::uint32_t>(kernels_));
    put_u32(out, static_cast<std::uint32_t>(channels_));
    for (const auto* part : {&kernel_, &kernel_bias_, &dense_, &dense_bias_})
        for (double v : *part) put_f64(out, v);
    return out;
}

ReferenceClassifier ReferenceClassifier::deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
        throw Error(ErrorCode::InvalidModel, "not a HYDM artifact");
    ArtifactReader r(bytes.subspan(4));
    const auto version = static_cast<std::uint32_t>(r.uint(4));
    if (version != kFormatVersion) throw Error(ErrorCode::InvalidModel, "unsupported artifact version " + std::to_string(version));
    ReferenceClassifier m;
    m.plot_type_ = PlotTypeId{static_cast<std::int64_t>(r.uint(8))};
    const auto labels = static_cast<std::uint32_t>(r.uint(4));
    if (labels < 2 || labels > 4096) throw Error(ErrorCode::InvalidModel, "bad label count");
    for (std::uint32_t i = 0; i < labels; ++i) m.label_order_.emplace_back(static_cast<std::int64_t>(r.uint(8)));
    m.kernels_ = static_cast<int>(r.uint(4));
    m.channels_ = static_cast<int>(r.uint(4));
    if (m.kernels_ < 1 || m.kernels_ > 4096 || (m.channels_ != 1 && m.channels_ != 3))
        throw Error(ErrorCode::InvalidModel, "bad kernel or channel count");
    const auto K = static_cast<std::size_t>(m.kernels_);
    r.f64s(m.kernel_, K * static_cast<std::size_t>(m.channels_) * 9);
    r.f64s(m.kernel_bias_, K);
    r.f64s(m.dense_, labels * K);
    r.f64s(m.dense_bias_, labels);
    if (!r.done()) throw Error(ErrorCode::InvalidModel, "trailing bytes in artifact");
    return m;
}

void ReferenceClassifier::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

ReferenceClassifier ReferenceClassifier::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::BackendFailure, "cannot open model artifact " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return deserialize(bytes);
}

BackendLoader reference_loader() {
    return [](const std::filesystem::path& path) -> std::unique_ptr<ClassifierBackend> {
        return std::make_unique<ReferenceClassifier>(ReferenceClassifier::load(path));
    };
}

ReferenceClassifier fit_reference(PlotTypeId plot_type, std::vector<LabelId> label_order, int channels,
                                  std::span<const Image> images, std::span<const std::size_t> targets,
                                  const TrainingOptions& options, std::vector<double>* loss_history) {
    if (images.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training images");
    auto model = ReferenceClassifier::initialize(plot_type, std::move(label_order), channels, options.kernels,
                                                 options.seed);
    std::vector<double> grad;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        const double l = model.loss(images, targets, &grad);
        if (loss_history) loss_history->push_back(l);
        auto params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= options.learning_rate * grad[i];
        model.set_parameters(params);
    }
    if (loss_history) loss_history->push_back(model.loss(images, targets));
    return model;
}

} // namespace hydra
