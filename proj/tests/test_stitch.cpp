#include <catch2/catch_amalgamated.hpp>

#include "hurpipe/stitch.hpp"
#include "support/oracles.hpp"

using namespace hurpipe;
using namespace hurpipe::stitch;
using raster::LabelRaster;
using raster::RasterTile;

namespace {

// A classifier that always emits the same class.
WindowClassifier constant_classifier(std::uint32_t k, std::uint32_t winner) {
    return [k, winner](const RasterTile& window) {
        LogitsGrid g;
        g.width = window.width;
        g.height = window.height;
        g.k = k;
        g.data.assign(std::size_t(window.width) * window.height * k, 0.0f);
        for (std::size_t i = 0; i < std::size_t(window.width) * window.height; ++i)
            g.data[i * k + winner] = 1.0f;
        return g;
    };
}

// Pixel-local classifier: logits depend only on the pixel's own band values.
WindowClassifier threshold_classifier() {
    return [](const RasterTile& window) {
        LogitsGrid g;
        g.width = window.width;
        g.height = window.height;
        g.k = 2;
        g.data.resize(std::size_t(window.width) * window.height * 2);
        for (std::size_t i = 0; i < std::size_t(window.width) * window.height; ++i) {
            const float v = window.bands[0][i];
            g.data[i * 2 + 0] = 1.0f - v;
            g.data[i * 2 + 1] = v;
        }
        return g;
    };
}

model::BaselineParams random_params(std::uint64_t seed, std::size_t k, std::size_t dim,
                                    model::FeatureConfig features) {
    model::BaselineParams p;
    p.k = k;
    p.dim = dim;
    p.features = features;
    Rng rng(seed);
    p.weights.resize(k * dim);
    p.bias.resize(k);
    for (double& v : p.weights) v = rng.unit() * 4.0 - 2.0;
    for (double& v : p.bias) v = rng.unit() - 0.5;
    return p;
}

} // namespace

TEST_CASE("a constant classifier stitches to a constant map") {
    const RasterTile raster = oracles::random_tile(3, 137, 81, 1);
    for (const std::uint32_t margin : {0u, 5u, 10u}) {
        const LabelRaster out =
            smooth_predict(constant_classifier(3, 2), raster, {40, margin});
        REQUIRE(out.width == raster.width);
        REQUIRE(out.height == raster.height);
        for (std::int16_t v : out.values) REQUIRE(v == 2);
    }
}

TEST_CASE("zero crop margin equals the naive tiling") {
    const RasterTile raster = oracles::random_tile(17, 97, 61, 1);
    const WindowClassifier cls = threshold_classifier();
    const LabelRaster smooth = smooth_predict(cls, raster, {32, 0});
    const LabelRaster naive = naive_predict(cls, raster, 32);
    REQUIRE(smooth.values == naive.values);
}

TEST_CASE("pixel-local classification stitches to the direct prediction") {
    // Direct oracle: run the classifier once over the full raster.
    const WindowClassifier cls = threshold_classifier();
    for (const auto& [w, h] : std::vector<std::pair<std::uint32_t, std::uint32_t>>{
             {96, 96},   // divisible by the stride
             {100, 70},  // ragged right/bottom
             {31, 17},   // smaller than one window
             {1, 1}}) {
        const RasterTile raster = oracles::random_tile(w * 1000 + h, w, h, 1);
        const LogitsGrid direct = cls(raster);
        LabelRaster expected = LabelRaster::create(w, h, raster.transform, 0, 2);
        for (std::size_t i = 0; i < expected.values.size(); ++i)
            expected.values[i] =
                direct.data[i * 2 + 1] > direct.data[i * 2] ? 1 : 0;
        for (const std::uint32_t margin : {0u, 3u, 8u}) {
            const LabelRaster out = smooth_predict(cls, raster, {32, margin});
            REQUIRE(out.values == expected.values);
        }
    }
}

TEST_CASE("baseline classifier with window 1 is strictly pixel-local") {
    const model::BaselineParams params = random_params(5, 3, 2, {1, true});
    const WindowClassifier cls = baseline_classifier(params);
    RasterTile a = oracles::random_tile(9, 40, 40, 2);
    RasterTile b = a;
    // Change one distant pixel; the logits at (3, 3) must not move.
    b.bands[0][35 * 40 + 35] = 0.99f;
    const LogitsGrid ga = cls(a);
    const LogitsGrid gb = cls(b);
    for (std::uint32_t c = 0; c < 3; ++c)
        REQUIRE(ga.at(3, 3, c) == gb.at(3, 3, c));
}

TEST_CASE("every output pixel is written exactly once when the stride divides") {
    const RasterTile raster = oracles::random_tile(23, 96, 64, 1);
    StitchStats stats;
    smooth_predict(threshold_classifier(), raster, {32, 8}, &stats); // stride 16
    REQUIRE(stats.writes.size() == raster.pixel_count());
    for (std::uint32_t n : stats.writes) REQUIRE(n == 1);
}

TEST_CASE("ragged extents stay fully covered") {
    const RasterTile raster = oracles::random_tile(29, 101, 53, 1);
    StitchStats stats;
    const LabelRaster out = smooth_predict(threshold_classifier(), raster, {32, 8}, &stats);
    REQUIRE(out.width == 101);
    REQUIRE(out.height == 53);
    for (std::uint32_t n : stats.writes) REQUIRE(n >= 1);
}

TEST_CASE("context classifiers agree with direct prediction away from seams") {
    // Window-3 context model: radius 1.
    const model::BaselineParams params = random_params(31, 3, 4, {3, true});
    const WindowClassifier cls = baseline_classifier(params);
    const RasterTile raster = oracles::random_tile(37, 90, 66, 2);

    const LogitsGrid direct = cls(raster);
    LabelRaster expected = LabelRaster::create(raster.width, raster.height, {}, 0, 3);
    for (std::size_t i = 0; i < expected.values.size(); ++i) {
        std::uint32_t best = 0;
        for (std::uint32_t c = 1; c < 3; ++c)
            if (direct.data[i * 3 + c] > direct.data[i * 3 + best]) best = c;
        expected.values[i] = std::int16_t(best);
    }

    SECTION("with margin >= context radius the whole map matches") {
        const LabelRaster out = smooth_predict(cls, raster, {30, 4});
        REQUIRE(out.values == expected.values);
    }
    SECTION("with margin 0, interior pixels still match") {
        const TilingScheme scheme{30, 0};
        const LabelRaster out = smooth_predict(cls, raster, scheme);
        const std::uint32_t radius = params.features.context_radius();
        std::size_t checked = 0;
        for (std::uint32_t y = 0; y < raster.height; ++y) {
            for (std::uint32_t x = 0; x < raster.width; ++x) {
                // Distance to the nearest window seam in this scheme.
                const std::uint32_t sx = x % scheme.stride();
                const std::uint32_t sy = y % scheme.stride();
                const std::uint32_t d = std::min(
                    std::min(sx, scheme.stride() - 1 - sx),
                    std::min(sy, scheme.stride() - 1 - sy));
                if (d < radius) continue;
                REQUIRE(out.at(x, y) == expected.at(x, y));
                ++checked;
            }
        }
        REQUIRE(checked > raster.pixel_count() / 2);
    }
}

TEST_CASE("classifier contract violations are caught") {
    const RasterTile raster = oracles::random_tile(41, 50, 50, 1);
    const WindowClassifier bad = [](const RasterTile& window) {
        LogitsGrid g;
        g.width = window.width - 1; // wrong dims
        g.height = window.height;
        g.k = 2;
        g.data.assign(std::size_t(g.width) * g.height * 2, 0.0f);
        return g;
    };
    REQUIRE_THROWS_AS(smooth_predict(bad, raster, {25, 5}), ContractError);
}

TEST_CASE("sub-tile split and reassembly") {
    SECTION("a 1000x1000 tile splits into sixteen 250x250 sub-tiles") {
        const RasterTile tile = oracles::random_tile(43, 1000, 1000, 1);
        const auto subs = split_subtiles(tile);
        REQUIRE(subs.size() == 16);
        for (const auto& s : subs) {
            REQUIRE(s.width == 250);
            REQUIRE(s.height == 250);
        }
        REQUIRE(bitwise_equal(reassemble(subs, 4), tile));
    }
    SECTION("a 250x250 tile is its own single sub-tile") {
        const RasterTile tile = oracles::random_tile(47, 250, 250, 2);
        const auto subs = split_subtiles(tile);
        REQUIRE(subs.size() == 1);
        REQUIRE(bitwise_equal(subs[0], tile));
    }
    SECTION("indivisible dimensions are a shape error") {
        const RasterTile tile = oracles::random_tile(53, 300, 250, 1);
        REQUIRE_THROWS_AS(split_subtiles(tile), ShapeError);
    }
}
