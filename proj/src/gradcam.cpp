#include "hydra/gradcam.hpp"

#include "hydra/error.hpp"

#include <algorithm>
#include <numeric>

namespace hydra {

FeatureMap gradcam_raw(std::span<const FeatureMap> feature_maps, std::span<const FeatureMap> gradients) {
    if (feature_maps.empty() || feature_maps.size() != gradients.size())
        throw Error(ErrorCode::ShapeMismatch, "feature maps and gradients differ in count");
    const int w = feature_maps.front().width, h = feature_maps.front().height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    for (std::size_t k = 0; k < feature_maps.size(); ++k) {
        const auto& a = feature_maps[k];
        const auto& g = gradients[k];
        if (a.width != w || a.height != h || g.width != w || g.height != h || a.values.size() != n ||
            g.values.size() != n)
            throw Error(ErrorCode::ShapeMismatch, "feature map / gradient shapes differ");
    }

    FeatureMap out{w, h, std::vector<double>(n, 0.0)};
    for (std::size_t k = 0; k < feature_maps.size(); ++k) {
        const auto& g = gradients[k].values;
        const double alpha = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(n);
        if (alpha == 0.0) continue;
        const auto& a = feature_maps[k].values;
        for (std::size_t i = 0; i < n; ++i) out.values[i] += alpha * a[i];
    }
    for (auto& v : out.values) v = std::max(v, 0.0);
    return out;
}

Image GradCamMap::to_image() const {
    Image img(width, height, 1);
    for (std::size_t i = 0; i < values.size(); ++i) img.data[i] = static_cast<float>(values[i]);
    return img;
}

GradCamMap gradcam(std::span<const FeatureMap> feature_maps, std::span<const FeatureMap> gradients, int input_width,
              int input_height) {
    if (input_width < 1 || input_height < 1) throw Error(ErrorCode::InvalidTarget, "heatmap size must be positive");
    const FeatureMap raw = gradcam_raw(feature_maps, gradients);

    // Upsample in double precision, then normalize so the peak is exactly 1.
    const auto coord = [](int i, int src_n, int dst_n) {
        return dst_n == 1 ? 0.0 : static_cast<double>(i) * (src_n - 1) / (dst_n - 1);
    };
    std::vector<double> up(static_cast<std::size_t>(input_width) * input_height);
    for (int y = 0; y < input_height; ++y) {
        const double sy = coord(y, raw.height, input_height);
        const int y0 = std::min(static_cast<int>(sy), raw.height - 1), y1 = std::min(y0 + 1, raw.height - 1);
        const double fy = sy - y0;
        for (int x = 0; x < input_width; ++x) {
            const double sx = coord(x, raw.width, input_width);
            const int x0 = std::min(static_cast<int>(sx), raw.width - 1), x1 = std::min(x0 + 1, raw.width - 1);
            const double fx = sx - x0;
            const double top = raw.at(x0, y0) * (1.0 - fx) + raw.at(x1, y0) * fx;
            const double bottom = raw.at(x0, y1) * (1.0 - fx) + raw.at(x1, y1) * fx;
            up[static_cast<std::size_t>(y) * input_width + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    const double peak = *std::max_element(up.begin(), up.end());
    if (peak > 0.0)
        for (auto& v : up) v /= peak;
    return GradCamMap{input_width, input_height, std::move(up)};
}

} // namespace hydra
