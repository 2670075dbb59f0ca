#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hurpipe/errors.hpp"
#include "hurpipe/raster.hpp"

namespace hurpipe::preprocess {

using raster::kIgnoreLabel;
using raster::LabelRaster;
using raster::RasterTile;

// A time series of co-registered observations of one tile.
struct ObservationStack {
    std::vector<RasterTile> observations;
    std::vector<std::int32_t> timestamps;

    void validate() const {
        if (observations.empty())
            throw EmptyInputError("observation stack is empty");
        const RasterTile& first = observations.front();
        for (const auto& o : observations) {
            if (o.width != first.width || o.height != first.height ||
                o.band_count() != first.band_count() ||
                !(o.transform == first.transform))
                throw ShapeError("observations do not share geometry");
        }
        if (!timestamps.empty() && timestamps.size() != observations.size())
            throw ShapeError("timestamp count does not match observation count");
    }
};

// Per-pixel, per-band median of the valid observations. Even counts take the
// mean of the two middle values; a pixel with no valid observation stays
// missing in the composite.
inline RasterTile median_composite(const ObservationStack& stack) {
    stack.validate();
    const RasterTile& first = stack.observations.front();
    RasterTile out = RasterTile::create(first.width, first.height, first.band_names,
                                        first.transform);
    out.nodata = first.nodata;

    std::vector<float> vals;
    vals.reserve(stack.observations.size());
    const std::size_t n_px = first.pixel_count();
    for (std::size_t b = 0; b < first.band_count(); ++b) {
        for (std::size_t i = 0; i < n_px; ++i) {
            vals.clear();
            for (const auto& o : stack.observations) {
                const float v = o.bands[b][i];
                if (!o.is_nodata(v)) vals.push_back(v);
            }
            if (vals.empty()) {
                out.bands[b][i] = out.nodata;
                continue;
            }
            std::sort(vals.begin(), vals.end());
            const std::size_t m = vals.size() / 2;
            out.bands[b][i] = vals.size() % 2 == 1
                                  ? vals[m]
                                  : float((double(vals[m - 1]) + double(vals[m])) / 2.0);
        }
    }
    return out;
}

// Marks masked pixels missing in every band. Nonzero mask entries mask.
inline RasterTile apply_quality_mask(const RasterTile& t,
                                     const std::vector<std::uint8_t>& mask) {
    t.validate();
    if (mask.size() != t.pixel_count())
        throw ShapeError("mask dimensions do not match tile dimensions");
    RasterTile out = t;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        for (auto& band : out.bands) band[i] = out.nodata;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Label remapping and settlement fusion
// ---------------------------------------------------------------------------

// Raw land-cover codes are remapped to the 8-class target scheme:
//   Water 0, Trees 1, Flooded Vegetation 2, Crops 3, Bare Ground 4,
//   Rangeland 5, Rural 6, Urban 7, ignored -1.
// Built Area keeps an interim code until the settlement fusion step decides
// rural vs urban per pixel.
struct ClassMap {
    std::map<std::int16_t, std::int16_t> raw_to_target;
    std::int16_t built_area_raw = 7;
    std::int16_t built_area_interim = 100;

    static ClassMap esri_default() {
        ClassMap cm;
        cm.raw_to_target = {
            {0, kIgnoreLabel}, // missing
            {1, 0},            // water
            {2, 1},            // trees
            {4, 2},            // flooded vegetation
            {5, 3},            // crops
            {7, 100},          // built area -> interim
            {8, 4},            // bare ground
            {9, kIgnoreLabel}, // snow/ice
            {10, kIgnoreLabel},// clouds
            {11, 5},           // rangeland
        };
        return cm;
    }
};

struct SmodMerge {
    std::set<std::int16_t> rural_codes{11, 12, 13};
    std::set<std::int16_t> urban_codes{21, 22, 23, 30};
    std::int16_t water_code = 10;
    std::int16_t fallback_class = 6; // settlement class when SMOD is water/missing

    void validate() const {
        for (std::int16_t c : rural_codes)
            if (urban_codes.count(c))
                throw ConfigError("SMOD code " + std::to_string(c) +
                                  " is both rural and urban");
        if (fallback_class != 6 && fallback_class != 7)
            throw ConfigError("fallback class must be a settlement class (6 or 7)");
    }
};

inline LabelRaster remap_esri(const LabelRaster& raw, const ClassMap& cm) {
    raw.validate();
    LabelRaster out = raw;
    out.num_classes = 8;
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        const auto it = cm.raw_to_target.find(raw.values[i]);
        if (it == cm.raw_to_target.end())
            throw DataError("unknown raw land-cover code " +
                            std::to_string(raw.values[i]) + " at pixel " +
                            std::to_string(i));
        out.values[i] = it->second;
    }
    return out;
}

// Resolves interim Built-Area pixels against a coarse settlement raster:
// rural codes become class 6, urban codes class 7, water or missing cells
// the configured fallback. Every other pixel is copied through untouched.
// The settlement raster is sampled by nearest neighbour at each pixel center.
inline LabelRaster fuse_builtarea(const LabelRaster& esri, const LabelRaster& smod,
                                  const SmodMerge& merge,
                                  std::int16_t built_area_interim = 100) {
    esri.validate();
    smod.validate();
    merge.validate();

    // The settlement raster must overlap the label extent at all.
    {
        const auto bounds = [](const LabelRaster& l) {
            double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
            bool first = true;
            for (const double col : {0.0, double(l.width)}) {
                for (const double row : {0.0, double(l.height)}) {
                    const auto [x, y] = l.transform.world(col, row);
                    if (first) {
                        min_x = max_x = x;
                        min_y = max_y = y;
                        first = false;
                    }
                    min_x = std::min(min_x, x);
                    max_x = std::max(max_x, x);
                    min_y = std::min(min_y, y);
                    max_y = std::max(max_y, y);
                }
            }
            return std::array<double, 4>{min_x, min_y, max_x, max_y};
        };
        const auto a = bounds(esri);
        const auto b = bounds(smod);
        if (a[0] >= b[2] || b[0] >= a[2] || a[1] >= b[3] || b[1] >= a[3])
            throw CoverageError("settlement raster extent does not overlap the labels");
    }

    LabelRaster out = esri;
    out.num_classes = 8;
    bool any_lookup = false;
    for (std::uint32_t y = 0; y < esri.height; ++y) {
        for (std::uint32_t x = 0; x < esri.width; ++x) {
            if (esri.at(x, y) != built_area_interim) continue;
            const auto [wx, wy] = esri.transform.world(double(x) + 0.5, double(y) + 0.5);
            const auto [sc, sr] = smod.transform.pixel(wx, wy);
            const auto sx = std::int64_t(std::floor(sc));
            const auto sy = std::int64_t(std::floor(sr));
            if (sx < 0 || sy < 0 || sx >= std::int64_t(smod.width) ||
                sy >= std::int64_t(smod.height))
                throw CoverageError("settlement raster does not cover pixel (" +
                                    std::to_string(x) + ", " + std::to_string(y) + ")");
            any_lookup = true;
            const std::int16_t code = smod.at(std::uint32_t(sx), std::uint32_t(sy));
            std::int16_t target;
            if (merge.rural_codes.count(code)) target = 6;
            else if (merge.urban_codes.count(code)) target = 7;
            else if (code == merge.water_code || code < 0) target = merge.fallback_class;
            else
                throw DataError("unknown SMOD code " + std::to_string(code) +
                                " under built-area pixel");
            out.set(x, y, target);
        }
    }
    (void)any_lookup;
    return out;
}

// Proportion of scored pixels per class, ignore pixels excluded.
inline std::vector<double> class_distribution(std::span<const LabelRaster> labels,
                                              std::uint32_t num_classes) {
    if (num_classes == 0) throw ConfigError("class count must be positive");
    std::vector<std::uint64_t> counts(num_classes, 0);
    std::uint64_t total = 0;
    for (const auto& l : labels) {
        for (std::int16_t v : l.values) {
            if (v == kIgnoreLabel) continue;
            if (v < 0 || std::uint32_t(v) >= num_classes)
                throw DataError("label value " + std::to_string(v) +
                                " outside class range");
            ++counts[std::size_t(v)];
            ++total;
        }
    }
    if (total == 0)
        throw EmptyInputError("all pixels are ignored; distribution undefined");
    std::vector<double> p(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k)
        p[k] = double(counts[k]) / double(total);
    return p;
}

inline std::vector<double> class_distribution(const LabelRaster& labels,
                                              std::uint32_t num_classes) {
    return class_distribution(std::span<const LabelRaster>(&labels, 1), num_classes);
}

// Inverse of the default remap; turns a target-scheme truth raster back into
// raw codes so synthetic scenes can exercise the full remap + fuse path.
// Both settlement classes collapse into the raw Built Area code.
inline LabelRaster esri_raw_from_truth(const LabelRaster& truth) {
    static const std::map<std::int16_t, std::int16_t> inverse = {
        {kIgnoreLabel, 0}, {0, 1}, {1, 2}, {2, 4}, {3, 5},
        {4, 8},            {5, 11}, {6, 7}, {7, 7},
    };
    LabelRaster out = truth;
    out.num_classes = 12;
    for (auto& v : out.values) {
        const auto it = inverse.find(v);
        if (it == inverse.end())
            throw DataError("truth value " + std::to_string(v) +
                            " has no raw land-cover equivalent");
        v = it->second;
    }
    return out;
}

inline void to_json(nlohmann::json& j, const ClassMap& cm) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [raw, target] : cm.raw_to_target)
        m[std::to_string(raw)] = target;
    j = {{"raw_to_target", m},
         {"built_area_raw", cm.built_area_raw},
         {"built_area_interim", cm.built_area_interim}};
}
inline void from_json(const nlohmann::json& j, ClassMap& cm) {
    cm.raw_to_target.clear();
    for (const auto& [key, value] : j.at("raw_to_target").items())
        cm.raw_to_target[std::int16_t(std::stoi(key))] = value.get<std::int16_t>();
    cm.built_area_raw = j.value("built_area_raw", std::int16_t(7));
    cm.built_area_interim = j.value("built_area_interim", std::int16_t(100));
}

inline void to_json(nlohmann::json& j, const SmodMerge& m) {
    j = {{"rural_codes", m.rural_codes},
         {"urban_codes", m.urban_codes},
         {"water_code", m.water_code},
         {"fallback_class", m.fallback_class}};
}
inline void from_json(const nlohmann::json& j, SmodMerge& m) {
    m.rural_codes = j.at("rural_codes").get<std::set<std::int16_t>>();
    m.urban_codes = j.at("urban_codes").get<std::set<std::int16_t>>();
    m.water_code = j.value("water_code", std::int16_t(10));
    m.fallback_class = j.value("fallback_class", std::int16_t(6));
}

} // namespace hurpipe::preprocess
