#include "support.hpp"

#include "hydra/classifier.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace hydra;
using hydra::test::error_code_of;

namespace {

const std::vector<LabelId> kLabels = {LabelId{1}, LabelId{2}, LabelId{3}};

Image noise_image(std::mt19937_64& rng, int w, int h, int c) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img(w, h, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

// Central differences of the loss, one parameter at a time.
std::vector<double> numeric_gradient(ReferenceClassifier m, std::span<const Image> images,
                                     std::span<const std::size_t> targets, double step) {
    auto params = m.parameters();
    std::vector<double> out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + step;
        m.set_parameters(params);
        const double up = m.loss(images, targets);
        params[i] = keep - step;
        m.set_parameters(params);
        const double down = m.loss(images, targets);
        params[i] = keep;
        out[i] = (up - down) / (2 * step);
    }
    return out;
}

} // namespace

TEST_CASE("softmax sums to one and is shift invariant") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 10.0);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> z(1 + rng() % 9);
        for (auto& v : z) v = n(rng);
        const auto p = softmax(z);
        CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        auto shifted = z;
        for (auto& v : shifted) v += 123.5;
        const auto q = softmax(shifted);
        for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(p[k] - q[k]) < 1e-9);
    }
    const auto big = softmax(std::vector<double>{1000.0, 1000.0});
    CHECK(big[0] == 0.5);
    CHECK(argmax(big) == 0);
}

TEST_CASE("forward shapes and channel checks") {
    const auto m = ReferenceClassifier::initialize(PlotTypeId{1}, kLabels, 1, 4, 9);
    std::mt19937_64 rng(1);
    const auto fwd = m.forward(noise_image(rng, 10, 7, 1));
    CHECK(fwd.logits.size() == 3);
    REQUIRE(fwd.feature_maps.size() == 4);
    CHECK(fwd.feature_maps[0].width == 8);
    CHECK(fwd.feature_maps[0].height == 5);
    for (const auto& fm : fwd.feature_maps)
        for (double v : fm.values) CHECK(v >= 0.0);
    CHECK(error_code_of([&] { m.forward(noise_image(rng, 10, 7, 3)); }) == ErrorCode::ShapeMismatch);
    CHECK(error_code_of([&] { m.forward(Image(2, 8, 1)); }) == ErrorCode::ShapeMismatch);
    CHECK(error_code_of([&] { ReferenceClassifier::initialize(PlotTypeId{1}, {LabelId{1}}, 1, 4, 1); }) ==
          ErrorCode::InvalidModel);
}

TEST_CASE("score gradients match finite differences of the logit") {
    const auto m = ReferenceClassifier::initialize(PlotTypeId{1}, kLabels, 1, 3, 2);
    std::mt19937_64 rng(3);
    const auto fwd = m.forward(noise_image(rng, 6, 6, 1));
    const auto grads = m.score_gradients(fwd, 1);
    REQUIRE(grads.size() == 3);
    // Logit 1 is linear in every activation, so perturbing any cell by h
    // changes it by exactly h times the gradient.
    const auto params = m.parameters();
    const std::size_t dense_offset = 3 * 9 + 3;
    const double w = params[dense_offset + 1 * 3 + 2];
    CHECK(grads[2].values[0] == doctest::Approx(w / 16.0));
    CHECK(error_code_of([&] { m.score_gradients(fwd, 3); }) == ErrorCode::Validation);
}

TEST_CASE("analytic loss gradient matches central differences") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const int c = trial % 2 ? 3 : 1;
        const auto m = ReferenceClassifier::initialize(PlotTypeId{1}, kLabels, c, 2, 100 + trial);
        std::vector<Image> images{noise_image(rng, 5, 6, c), noise_image(rng, 5, 6, c)};
        std::vector<std::size_t> targets{static_cast<std::size_t>(trial % 3), 1};
        std::vector<double> analytic;
        m.loss(images, targets, &analytic);
        const auto numeric = numeric_gradient(m, images, targets, 1e-4);
        REQUIRE(analytic.size() == numeric.size());
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-4});
            CHECK(std::abs(analytic[i] - numeric[i]) / scale < 1e-3);
        }
    }
}

TEST_CASE("artifacts round-trip and reject corruption") {
    const auto m = ReferenceClassifier::initialize(PlotTypeId{4}, kLabels, 3, 5, 77);
    const auto bytes = m.serialize();
    const auto back = ReferenceClassifier::deserialize(bytes);
    CHECK(back.parameters() == m.parameters());
    CHECK(back.label_order() == kLabels);
    CHECK(back.plot_type() == PlotTypeId{4});
    CHECK(back.channels() == 3);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK(error_code_of([&] { ReferenceClassifier::deserialize(truncated); }) == ErrorCode::InvalidModel);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK(error_code_of([&] { ReferenceClassifier::deserialize(magic); }) == ErrorCode::InvalidModel);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK(error_code_of([&] { ReferenceClassifier::deserialize(trailing); }) == ErrorCode::InvalidModel);

    test::TempDir dir("clf");
    m.save(dir / "m.hydm");
    CHECK(ReferenceClassifier::load(dir / "m.hydm").parameters() == m.parameters());
    CHECK(error_code_of([&] { ReferenceClassifier::load(dir / "none.hydm"); }) == ErrorCode::BackendFailure);
}

TEST_CASE("training is deterministic and reduces the loss") {
    std::mt19937_64 rng(8);
    std::vector<Image> images;
    std::vector<std::size_t> targets;
    for (int i = 0; i < 12; ++i) {
        Image img = noise_image(rng, 8, 8, 1);
        const bool dark = i % 2 == 0;
        if (dark)
            for (int y = 2; y < 6; ++y)
                for (int x = 2; x < 6; ++x) img.at(x, y) = 0.0f;
        images.push_back(img);
        targets.push_back(dark ? 1 : 0);
    }
    const std::vector<LabelId> two = {LabelId{1}, LabelId{2}};

    TrainingOptions none;
    none.epochs = 0;
    none.seed = 4;
    const auto untrained = fit_reference(PlotTypeId{1}, two, 1, images, targets, none);
    CHECK(untrained.parameters() == ReferenceClassifier::initialize(PlotTypeId{1}, two, 1, 8, 4).parameters());

    TrainingOptions slow;
    slow.epochs = 30;
    slow.learning_rate = 1e-3;
    std::vector<double> history;
    fit_reference(PlotTypeId{1}, two, 1, images, targets, slow, &history);
    REQUIRE(history.size() == 31);
    for (std::size_t i = 1; i < history.size(); ++i) CHECK(history[i] <= history[i - 1] + 1e-12);

    TrainingOptions fast;
    fast.epochs = 400;
    const auto a = fit_reference(PlotTypeId{1}, two, 1, images, targets, fast);
    const auto b = fit_reference(PlotTypeId{1}, two, 1, images, targets, fast);
    CHECK(a.parameters() == b.parameters());
    for (std::size_t i = 0; i < images.size(); ++i) CHECK(argmax(softmax(a.forward(images[i]).logits)) == targets[i]);

    CHECK(error_code_of([&] { fit_reference(PlotTypeId{1}, two, 1, {}, {}, fast); }) == ErrorCode::EmptyTrainingSet);
}
