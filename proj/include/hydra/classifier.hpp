#pragma once

#include "hydra/image.hpp"
#include "hydra/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace hydra {

/// One spatial activation map, row-major.
struct FeatureMap {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    double at(int x, int y) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct ForwardResult {
    std::vector<double> logits;
    std::vector<FeatureMap> feature_maps;
};

// Contract every model runtime must satisfy to serve as a plot type's head.
class ClassifierBackend {
public:
    virtual ~ClassifierBackend() = default;

    virtual std::size_t label_count() const = 0;
    virtual ForwardResult forward(const Image& payload) const = 0;
    /// d(logit of class_index) / d(feature map k), one map per feature map,
    /// shape-matched to forward(payload).feature_maps.
    virtual std::vector<FeatureMap> score_gradients(const ForwardResult& forward,
                                                    std::size_t class_index) const = 0;
};

using BackendLoader = std::function<std::unique_ptr<ClassifierBackend>(const std::filesystem::path&)>;

/// Numerically stable softmax (max-subtracted).
std::vector<double> softmax(std::span<const double> logits);

// Single convolution layer head: K valid-mode 3x3 kernels over all input
// channels, ReLU, global average pooling, then a dense layer to the logits.
class ReferenceClassifier final : public ClassifierBackend {
public:
    static constexpr int kDefaultKernels = 8;
    static constexpr std::uint32_t kFormatVersion = 1;

    ReferenceClassifier() = default;

    /// Seeded initial parameters.
    static ReferenceClassifier initialize(PlotTypeId plot_type, std::vector<LabelId> label_order, int channels,
                                          int kernels, std::uint64_t seed);

    std::size_t label_count() const override { return label_order_.size(); }
    ForwardResult forward(const Image& payload) const override;
    std::vector<FeatureMap> score_gradients(const ForwardResult& forward, std::size_t class_index) const override;

    /// Mean cross-entropy over the batch. When `gradient` is non-null it
    /// receives d(loss)/d(parameter) in parameters() order.
    double loss(std::span<const Image> images, std::span<const std::size_t> targets,
                std::vector<double>* gradient = nullptr) const;

    /// Flat parameter vector: kernels (k, c, row, col), kernel biases,
    /// dense weights (label, k), dense biases.
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> values);
    std::size_t parameter_count() const;

    PlotTypeId plot_type() const noexcept { return plot_type_; }
    const std::vector<LabelId>& label_order() const noexcept { return label_order_; }
    int kernels() const noexcept { return kernels_; }
    int channels() const noexcept { return channels_; }

    std::vector<std::uint8_t> serialize() const;
    static ReferenceClassifier deserialize(std::span<const std::uint8_t> bytes);
    void save(const std::filesystem::path& path) const;
    static ReferenceClassifier load(const std::filesystem::path& path);

private:
    double kernel(int k, int c, int row, int col) const noexcept {
        return kernel_[((static_cast<std::size_t>(k) * channels_ + c) * 3 + row) * 3 + col];
    }

    PlotTypeId plot_type_;
    std::vector<LabelId> label_order_;
    int kernels_ = 0;
    int channels_ = 1;
    std::vector<double> kernel_;       // K * C * 9
    std::vector<double> kernel_bias_;  // K
    std::vector<double> dense_;        // L * K
    std::vector<double> dense_bias_;   // L
};

BackendLoader reference_loader();

struct TrainingOptions {
    int epochs = 500;
    double learning_rate = 0.5;
    std::uint64_t seed = 1;
    int kernels = ReferenceClassifier::kDefaultKernels;
};

/// Full-batch gradient descent on mean cross-entropy. `loss_history`, when
/// given, receives the loss before each epoch and after the last one.
ReferenceClassifier fit_reference(PlotTypeId plot_type, std::vector<LabelId> label_order, int channels,
                                  std::span<const Image> images, std::span<const std::size_t> targets,
                                  const TrainingOptions& options, std::vector<double>* loss_history = nullptr);

} // namespace hydra
