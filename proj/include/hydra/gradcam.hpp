#pragma once

#include "hydra/classifier.hpp"
#include "hydra/image.hpp"

#include <span>
#include <vector>

namespace hydra {

/// Heatmap at input resolution, values in [0,1], row-major.
struct GradCamMap {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    double at(int x, int y) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
    Image to_image() const;

    friend bool operator==(const GradCamMap&, const GradCamMap&) = default;
};

/// Unnormalized class activation map at feature-map resolution:
/// ReLU(sum_k alpha_k * A_k) with alpha_k the spatial mean of dScore/dA_k.
FeatureMap gradcam_raw(std::span<const FeatureMap> feature_maps, std::span<const FeatureMap> gradients);

/// gradcam_raw bilinearly upsampled to the input size and divided by its
/// maximum. An identically zero map stays zero. Throws ShapeMismatch.
GradCamMap gradcam(std::span<const FeatureMap> feature_maps, std::span<const FeatureMap> gradients, int input_width,
              int input_height);

} // namespace hydra
