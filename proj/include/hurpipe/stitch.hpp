#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include "hurpipe/errors.hpp"
#include "hurpipe/model.hpp"
#include "hurpipe/raster.hpp"

namespace hurpipe::stitch {

using raster::LabelRaster;
using raster::RasterTile;

// Sliding-window scheme for map generation: windows overlap by twice the
// crop margin, and only the center crop of every prediction survives. The
// raster is reflect-padded so border pixels still receive a full window.
struct TilingScheme {
    std::uint32_t window = 250;
    std::uint32_t crop_margin = 25;

    void validate() const {
        if (window == 0) throw ConfigError("window must be positive");
        if (2 * crop_margin >= window)
            throw ConfigError("crop margin must be less than half the window");
    }

    std::uint32_t stride() const { return window - 2 * crop_margin; }
};

struct LogitsGrid {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t k = 0;
    std::vector<float> data; // pixel-major: [y * width + x] * k + c

    float at(std::uint32_t x, std::uint32_t y, std::uint32_t c) const {
        return data[(std::size_t(y) * width + x) * k + c];
    }
};

// A pluggable pixel classifier: maps a window-sized tile to per-pixel logits
// of the same spatial dimensions.
using WindowClassifier = std::function<LogitsGrid(const RasterTile&)>;

// Adapts the baseline model to the window-classifier contract.
inline WindowClassifier baseline_classifier(model::BaselineParams params) {
    return [params = std::move(params)](const RasterTile& window) {
        const model::FeatureMatrix f = model::extract_features(window, params.features);
        const std::vector<float> logits = model::predict(params, f);
        LogitsGrid out;
        out.width = window.width;
        out.height = window.height;
        out.k = std::uint32_t(params.k);
        out.data = std::move(logits);
        return out;
    };
}

// Optional instrumentation for the coverage property.
struct StitchStats {
    std::vector<std::uint32_t> writes; // per output pixel
};

namespace detail {

inline RasterTile reflect_pad(const RasterTile& src, std::uint32_t pad_left,
                              std::uint32_t pad_top, std::uint32_t out_w,
                              std::uint32_t out_h) {
    RasterTile out = RasterTile::create(out_w, out_h, src.band_names, src.transform);
    out.nodata = src.nodata;
    out.transform.origin_x -=
        double(pad_left) * src.transform.pixel_width;
    out.transform.origin_y -= double(pad_top) * src.transform.pixel_height;
    for (std::uint32_t y = 0; y < out_h; ++y) {
        const std::size_t sy =
            model::detail::reflect_index(std::int64_t(y) - pad_top, src.height);
        for (std::uint32_t x = 0; x < out_w; ++x) {
            const std::size_t sx =
                model::detail::reflect_index(std::int64_t(x) - pad_left, src.width);
            for (std::size_t b = 0; b < src.bands.size(); ++b)
                out.bands[b][std::size_t(y) * out_w + x] =
                    src.bands[b][sy * src.width + sx];
        }
    }
    return out;
}

inline RasterTile crop(const RasterTile& src, std::uint32_t x0, std::uint32_t y0,
                       std::uint32_t w, std::uint32_t h) {
    RasterTile out = RasterTile::create(w, h, src.band_names, src.transform);
    out.nodata = src.nodata;
    const auto [ox, oy] = src.transform.world(double(x0), double(y0));
    out.transform.origin_x = ox;
    out.transform.origin_y = oy;
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::size_t b = 0; b < src.bands.size(); ++b)
                out.bands[b][std::size_t(y) * w + x] =
                    src.bands[b][std::size_t(y0 + y) * src.width + (x0 + x)];
    return out;
}

// Window start positions (in output coordinates) of the center-crop regions:
// a full cover at stride spacing, with a final start aligned to the far edge
// when the extent is not a multiple of the stride.
inline std::vector<std::uint32_t> crop_positions(std::uint32_t extent,
                                                 std::uint32_t stride) {
    std::vector<std::uint32_t> out;
    if (extent <= stride) {
        out.push_back(0);
        return out;
    }
    for (std::uint32_t p = 0; p + stride <= extent; p += stride) out.push_back(p);
    if (extent % stride != 0) out.push_back(extent - stride);
    return out;
}

} // namespace detail

// Predicts an arbitrarily sized raster through window-sized classifier calls.
// Every output pixel takes its label from the window in which it sits deepest
// inside the center crop; overlaps from edge-aligned windows resolve the same
// way, with the earlier window winning ties.
inline LabelRaster smooth_predict(const WindowClassifier& classify,
                                  const RasterTile& raster, const TilingScheme& scheme,
                                  StitchStats* stats = nullptr) {
    raster.validate();
    scheme.validate();
    const std::uint32_t H = raster.height;
    const std::uint32_t W = raster.width;
    const std::uint32_t m = scheme.crop_margin;
    const std::uint32_t s = scheme.stride();

    // Pad by the crop margin on all sides, extending right/bottom if the
    // raster is smaller than one window.
    const std::uint32_t padded_w = std::max(W + 2 * m, scheme.window);
    const std::uint32_t padded_h = std::max(H + 2 * m, scheme.window);
    const RasterTile padded = detail::reflect_pad(raster, m, m, padded_w, padded_h);

    const std::vector<std::uint32_t> ys = detail::crop_positions(H, s);
    const std::vector<std::uint32_t> xs = detail::crop_positions(W, s);

    LabelRaster out = LabelRaster::create(W, H, raster.transform, 0, 2);
    std::vector<std::uint32_t> depth(out.pixel_count(), 0);
    if (stats) stats->writes.assign(out.pixel_count(), 0);

    std::uint32_t out_k = 0;
    for (std::uint32_t wy : ys) {
        for (std::uint32_t wx : xs) {
            const RasterTile window =
                detail::crop(padded, wx, wy, scheme.window, scheme.window);
            const LogitsGrid logits = classify(window);
            if (logits.width != scheme.window || logits.height != scheme.window ||
                logits.k == 0)
                throw ContractError("classifier output does not match window dims");
            out_k = logits.k;

            const std::uint32_t y_end = std::min(H, wy + s);
            const std::uint32_t x_end = std::min(W, wx + s);
            for (std::uint32_t y = wy; y < y_end; ++y) {
                for (std::uint32_t x = wx; x < x_end; ++x) {
                    const std::uint32_t d =
                        1 + std::min(std::min(y - wy, x - wx),
                                     std::min(wy + s - 1 - y, wx + s - 1 - x));
                    const std::size_t idx = std::size_t(y) * W + x;
                    if (stats) ++stats->writes[idx];
                    if (d <= depth[idx]) continue;
                    depth[idx] = d;
                    std::uint32_t best = 0;
                    float best_v = logits.at(x - wx + m, y - wy + m, 0);
                    for (std::uint32_t c = 1; c < logits.k; ++c) {
                        const float v = logits.at(x - wx + m, y - wy + m, c);
                        if (v > best_v) {
                            best_v = v;
                            best = c;
                        }
                    }
                    out.values[idx] = std::int16_t(best);
                }
            }
        }
    }
    out.num_classes = std::uint8_t(std::min<std::uint32_t>(out_k, 255));
    return out;
}

// The plain non-overlapping baseline: full window outputs are kept. Provided
// for A/B comparison of seam behaviour; identical to smooth_predict with a
// zero crop margin.
inline LabelRaster naive_predict(const WindowClassifier& classify,
                                 const RasterTile& raster, std::uint32_t window,
                                 StitchStats* stats = nullptr) {
    return smooth_predict(classify, raster, TilingScheme{window, 0}, stats);
}

// Row-major, non-overlapping split into square sub-tiles.
inline std::vector<RasterTile> split_subtiles(const RasterTile& tile,
                                              std::uint32_t sub = 250) {
    tile.validate();
    if (sub == 0 || tile.width % sub != 0 || tile.height % sub != 0)
        throw ShapeError("tile dimensions are not divisible by the sub-tile size");
    std::vector<RasterTile> out;
    for (std::uint32_t y0 = 0; y0 < tile.height; y0 += sub)
        for (std::uint32_t x0 = 0; x0 < tile.width; x0 += sub)
            out.push_back(detail::crop(tile, x0, y0, sub, sub));
    return out;
}

// Inverse of split_subtiles given the number of sub-tile columns.
inline RasterTile reassemble(const std::vector<RasterTile>& subtiles,
                             std::uint32_t cols) {
    if (subtiles.empty() || cols == 0 || subtiles.size() % cols != 0)
        throw ShapeError("sub-tile list does not form a full grid");
    const std::uint32_t rows = std::uint32_t(subtiles.size()) / cols;
    const std::uint32_t sub_w = subtiles.front().width;
    const std::uint32_t sub_h = subtiles.front().height;
    RasterTile out = RasterTile::create(cols * sub_w, rows * sub_h,
                                        subtiles.front().band_names,
                                        subtiles.front().transform);
    out.nodata = subtiles.front().nodata;
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) {
            const RasterTile& t = subtiles[std::size_t(r) * cols + c];
            if (t.width != sub_w || t.height != sub_h ||
                t.band_count() != out.band_count())
                throw ShapeError("sub-tiles do not share dimensions");
            for (std::uint32_t y = 0; y < sub_h; ++y)
                for (std::uint32_t x = 0; x < sub_w; ++x)
                    for (std::size_t b = 0; b < out.band_count(); ++b)
                        out.bands[b][std::size_t(r * sub_h + y) * out.width +
                                     (c * sub_w + x)] =
                            t.bands[b][std::size_t(y) * sub_w + x];
        }
    }
    return out;
}

} // namespace hurpipe::stitch
