#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hurpipe/errors.hpp"
#include "hurpipe/raster.hpp"
#include "hurpipe/rng.hpp"

namespace hurpipe::raster {

// Procedural scene generator: a deterministic stand-in for satellite
// ingestion. A scene is a background class plus circular class regions;
// each yearly observation is the per-class band mean plus seeded noise,
// with a configurable fraction of (pixel, year) observations clouded out.

struct ClassSpectrum {
    std::int16_t class_id = 0;
    std::vector<double> band_means;
    double sigma = 0.05;
};

struct ClassBlob {
    std::int16_t class_id = 0;
    double cx = 0.0; // pixel coordinates
    double cy = 0.0;
    double radius = 0.0;
};

struct SyntheticSceneSpec {
    std::uint32_t width = 256;
    std::uint32_t height = 256;
    std::uint32_t num_years = 3;
    std::vector<std::string> band_names;
    std::int16_t background_class = 5;
    std::vector<ClassSpectrum> spectra;
    std::vector<ClassBlob> blobs;
    double cloud_fraction = 0.0;
    std::uint64_t seed = 0;
    GeoTransform transform{0.0, 0.0, kPixelSizeM, -kPixelSizeM, 0.0, 0.0, 0};
    std::uint32_t smod_cell_px = 100;

    void validate() const {
        if (width == 0 || height == 0) throw ConfigError("scene dimensions must be positive");
        if (num_years == 0) throw ConfigError("scene needs at least one year");
        if (band_names.empty()) throw ConfigError("scene needs at least one band");
        if (cloud_fraction < 0.0 || cloud_fraction > 1.0)
            throw ConfigError("cloud_fraction must be in [0, 1]");
        if (smod_cell_px == 0) throw ConfigError("smod_cell_px must be positive");
        for (const auto& s : spectra) {
            if (s.band_means.size() != band_names.size())
                throw ConfigError("spectrum for class " + std::to_string(s.class_id) +
                                  " does not cover all bands");
            if (s.sigma < 0.0) throw ConfigError("spectrum sigma must be non-negative");
        }
    }
};

struct SyntheticScene {
    std::vector<RasterTile> years;
    LabelRaster truth;
    LabelRaster smod;
};

namespace smod_codes {
constexpr std::int16_t water = 10;
constexpr std::int16_t rural_low = 11;
constexpr std::int16_t urban_centre = 30;
} // namespace smod_codes

inline SyntheticScene gen_synthetic_scene(const SyntheticSceneSpec& spec) {
    spec.validate();

    std::map<std::int16_t, const ClassSpectrum*> spectrum_of;
    for (const auto& s : spec.spectra) spectrum_of[s.class_id] = &s;
    const auto need_spectrum = [&](std::int16_t c) -> const ClassSpectrum& {
        auto it = spectrum_of.find(c);
        if (it == spectrum_of.end())
            throw ConfigError("no spectrum for class " + std::to_string(c));
        return *it->second;
    };
    need_spectrum(spec.background_class);
    for (const auto& b : spec.blobs) need_spectrum(b.class_id);

    SyntheticScene scene;
    scene.truth = LabelRaster::create(spec.width, spec.height, spec.transform,
                                      spec.background_class);

    // Later blobs paint over earlier ones.
    std::map<std::int16_t, std::size_t> class_pixels;
    class_pixels[spec.background_class] = 0;
    for (const auto& b : spec.blobs) class_pixels[b.class_id] = 0;
    for (std::uint32_t y = 0; y < spec.height; ++y) {
        for (std::uint32_t x = 0; x < spec.width; ++x) {
            std::int16_t c = spec.background_class;
            const double px = double(x) + 0.5;
            const double py = double(y) + 0.5;
            for (const auto& b : spec.blobs) {
                const double dx = px - b.cx;
                const double dy = py - b.cy;
                if (dx * dx + dy * dy <= b.radius * b.radius) c = b.class_id;
            }
            scene.truth.set(x, y, c);
            ++class_pixels[c];
        }
    }
    for (const auto& [c, n] : class_pixels)
        if (n == 0)
            throw ConfigError("layout class " + std::to_string(c) +
                              " occupies no pixel; enlarge or move its blob");

    const std::size_t n_px = scene.truth.pixel_count();
    const std::size_t n_bands = spec.band_names.size();
    for (std::uint32_t year = 0; year < spec.num_years; ++year) {
        RasterTile obs = RasterTile::create(spec.width, spec.height, spec.band_names,
                                            spec.transform);
        for (std::size_t i = 0; i < n_px; ++i) {
            const bool clouded =
                unit_at({spec.seed, 0xC1000Dull, year, i}) < spec.cloud_fraction;
            if (clouded) {
                for (std::size_t b = 0; b < n_bands; ++b)
                    obs.bands[b][i] = obs.nodata;
                continue;
            }
            const ClassSpectrum& s = need_spectrum(scene.truth.values[i]);
            for (std::size_t b = 0; b < n_bands; ++b) {
                const double noise =
                    s.sigma == 0.0 ? 0.0
                                   : s.sigma * normal_at({spec.seed, 0xB0B5Eull, year, i, b});
                obs.bands[b][i] = float(s.band_means[b] + noise);
            }
        }
        scene.years.push_back(std::move(obs));
    }

    // Coarse settlement grid: one cell per smod_cell_px block, classed by the
    // majority settlement type of the truth pixels it covers.
    const std::uint32_t cw = (spec.width + spec.smod_cell_px - 1) / spec.smod_cell_px;
    const std::uint32_t ch = (spec.height + spec.smod_cell_px - 1) / spec.smod_cell_px;
    GeoTransform st = spec.transform;
    st.pixel_width *= spec.smod_cell_px;
    st.pixel_height *= spec.smod_cell_px;
    scene.smod = LabelRaster::create(cw, ch, st, smod_codes::rural_low, 31);
    for (std::uint32_t cy = 0; cy < ch; ++cy) {
        for (std::uint32_t cx = 0; cx < cw; ++cx) {
            std::size_t urban = 0, rural = 0, water = 0, total = 0;
            const std::uint32_t y1 =
                std::min(spec.height, (cy + 1) * spec.smod_cell_px);
            const std::uint32_t x1 = std::min(spec.width, (cx + 1) * spec.smod_cell_px);
            for (std::uint32_t y = cy * spec.smod_cell_px; y < y1; ++y) {
                for (std::uint32_t x = cx * spec.smod_cell_px; x < x1; ++x) {
                    const std::int16_t c = scene.truth.at(x, y);
                    ++total;
                    if (c == 7) ++urban;
                    else if (c == 6) ++rural;
                    else if (c == 0) ++water;
                }
            }
            std::int16_t code = smod_codes::rural_low;
            if (urban > 0 && urban >= rural) code = smod_codes::urban_centre;
            else if (rural > 0) code = smod_codes::rural_low;
            else if (2 * water > total) code = smod_codes::water;
            scene.smod.set(cx, cy, code);
        }
    }
    return scene;
}

inline void to_json(nlohmann::json& j, const ClassSpectrum& s) {
    j = {{"class", s.class_id}, {"means", s.band_means}, {"sigma", s.sigma}};
}
inline void from_json(const nlohmann::json& j, ClassSpectrum& s) {
    s.class_id = j.at("class").get<std::int16_t>();
    s.band_means = j.at("means").get<std::vector<double>>();
    s.sigma = j.value("sigma", 0.05);
}

inline void to_json(nlohmann::json& j, const ClassBlob& b) {
    j = {{"class", b.class_id}, {"cx", b.cx}, {"cy", b.cy}, {"radius", b.radius}};
}
inline void from_json(const nlohmann::json& j, ClassBlob& b) {
    b.class_id = j.at("class").get<std::int16_t>();
    b.cx = j.at("cx").get<double>();
    b.cy = j.at("cy").get<double>();
    b.radius = j.at("radius").get<double>();
}

inline void to_json(nlohmann::json& j, const SyntheticSceneSpec& s) {
    j = {{"width", s.width},
         {"height", s.height},
         {"num_years", s.num_years},
         {"bands", s.band_names},
         {"background_class", s.background_class},
         {"spectra", s.spectra},
         {"blobs", s.blobs},
         {"cloud_fraction", s.cloud_fraction},
         {"seed", s.seed},
         {"smod_cell_px", s.smod_cell_px}};
}
inline void from_json(const nlohmann::json& j, SyntheticSceneSpec& s) {
    s.width = j.at("width").get<std::uint32_t>();
    s.height = j.at("height").get<std::uint32_t>();
    s.num_years = j.value("num_years", 3u);
    s.band_names = j.at("bands").get<std::vector<std::string>>();
    s.background_class = j.at("background_class").get<std::int16_t>();
    s.spectra = j.at("spectra").get<std::vector<ClassSpectrum>>();
    s.blobs = j.value("blobs", std::vector<ClassBlob>{});
    s.cloud_fraction = j.value("cloud_fraction", 0.0);
    s.seed = j.value("seed", std::uint64_t(0));
    s.smod_cell_px = j.value("smod_cell_px", 100u);
}

} // namespace hurpipe::raster
