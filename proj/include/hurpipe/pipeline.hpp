#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hurpipe/dhs.hpp"
#include "hurpipe/digest.hpp"
#include "hurpipe/errors.hpp"
#include "hurpipe/metrics.hpp"
#include "hurpipe/model.hpp"
#include "hurpipe/preprocess.hpp"
#include "hurpipe/raster.hpp"
#include "hurpipe/rng.hpp"
#include "hurpipe/spatialcv.hpp"
#include "hurpipe/stitch.hpp"
#include "hurpipe/synth.hpp"

namespace hurpipe::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration. Unknown keys anywhere in the document are hard errors, so a
// typo cannot silently fall back to a default.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, const std::string& ctx,
                       const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ValidationError(ctx + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ValidationError("unknown key '" + key + "' in " + ctx);
    }
}

template <class T>
T require(const json& j, const std::string& ctx, const std::string& key) {
    if (!j.contains(key))
        throw ValidationError("missing key '" + key + "' in " + ctx);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError("bad value for '" + key + "' in " + ctx + ": " + e.what());
    }
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

// Index-based parallel loop; each task must write only its own outputs.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    const unsigned workers = std::min<unsigned>(threads, unsigned(n));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

} // namespace detail

struct SceneCountry {
    std::string code;
    std::string name;
    std::uint32_t tiles_x = 1;
    std::uint32_t tiles_y = 1;
};

struct SceneConfig {
    std::vector<SceneCountry> countries;
    std::uint32_t num_years = 3;
    double cloud_fraction = 0.0;
    std::vector<std::string> bands;
    std::int16_t background_class = 5;
    std::vector<raster::ClassSpectrum> spectra;
    std::vector<raster::ClassBlob> blobs; // per-tile template, pixel units
    double jitter_px = 0.0;
    std::uint32_t smod_cell_px = 100;
};

struct TrainingConfig {
    model::Hyperparams hyper;
    std::uint32_t samples_per_tile = 1000;
    std::uint64_t seed = 0;
};

struct DhsConfig {
    fs::path clusters;
    std::size_t draws = 20;
    std::uint64_t seed = 0;
    dhs::PerturbationModel perturbation;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    fs::path output_dir;
    unsigned threads = 0; // 0 = hardware concurrency
    SceneConfig scene;
    std::vector<std::pair<double, double>> normalization;
    model::FeatureConfig features;
    model::WeightStrategy weighting = model::WeightStrategy::inverse;
    TrainingConfig training;
    int fold_k = 5;
    stitch::TilingScheme tiling;
    std::uint32_t num_classes = 8;
    std::int16_t fuse_fallback = 6;
    std::optional<DhsConfig> dhs;
};

inline PipelineConfig parse_config(const json& j, const fs::path& config_dir = {}) {
    detail::check_keys(j, "config",
                       {"seed", "output_dir", "threads", "scene", "normalization",
                        "features", "weighting", "training", "folds", "stitch",
                        "evaluate", "fuse", "dhs"});
    PipelineConfig cfg;
    cfg.seed = detail::require<std::uint64_t>(j, "config", "seed");
    cfg.output_dir = detail::require<std::string>(j, "config", "output_dir");
    cfg.threads = j.value("threads", 0u);

    const json& scene = j.at("scene");
    detail::check_keys(scene, "scene",
                       {"countries", "num_years", "cloud_fraction", "bands",
                        "background_class", "spectra", "blobs", "jitter_px",
                        "smod_cell_px"});
    for (const json& c : detail::require<json>(scene, "scene", "countries")) {
        detail::check_keys(c, "scene.countries[]", {"code", "name", "tiles_x", "tiles_y"});
        SceneCountry sc;
        sc.code = detail::require<std::string>(c, "country", "code");
        sc.name = detail::require<std::string>(c, "country", "name");
        sc.tiles_x = detail::require<std::uint32_t>(c, "country", "tiles_x");
        sc.tiles_y = detail::require<std::uint32_t>(c, "country", "tiles_y");
        cfg.scene.countries.push_back(std::move(sc));
    }
    if (cfg.scene.countries.empty())
        throw ValidationError("scene needs at least one country");
    for (const auto& c : cfg.scene.countries) {
        if (c.tiles_x == 0 || c.tiles_y == 0)
            throw ValidationError("country " + c.code + " has an empty tile block");
        if (c.tiles_y != cfg.scene.countries.front().tiles_y)
            throw ValidationError("all countries must share tiles_y");
    }
    cfg.scene.num_years = scene.value("num_years", 3u);
    cfg.scene.cloud_fraction = scene.value("cloud_fraction", 0.0);
    cfg.scene.bands = detail::require<std::vector<std::string>>(scene, "scene", "bands");
    cfg.scene.background_class = scene.value("background_class", std::int16_t(5));
    for (const json& s : detail::require<json>(scene, "scene", "spectra")) {
        detail::check_keys(s, "scene.spectra[]", {"class", "means", "sigma"});
        cfg.scene.spectra.push_back(s.get<raster::ClassSpectrum>());
    }
    for (const json& b : scene.value("blobs", json::array())) {
        detail::check_keys(b, "scene.blobs[]", {"class", "cx", "cy", "radius"});
        cfg.scene.blobs.push_back(b.get<raster::ClassBlob>());
    }
    cfg.scene.jitter_px = scene.value("jitter_px", 0.0);
    cfg.scene.smod_cell_px = scene.value("smod_cell_px", 100u);

    for (const json& r : detail::require<json>(j, "config", "normalization")) {
        if (!r.is_array() || r.size() != 2)
            throw ValidationError("normalization entries must be [min, max] pairs");
        cfg.normalization.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());
    }
    if (cfg.normalization.size() != cfg.scene.bands.size())
        throw ValidationError("need one normalization range per band");

    const json& feat = j.at("features");
    detail::check_keys(feat, "features", {"context_window", "include_raw"});
    cfg.features = feat.get<model::FeatureConfig>();
    cfg.features.validate();

    cfg.weighting =
        model::weight_strategy_from_string(detail::require<std::string>(j, "config", "weighting"));

    const json& training = j.at("training");
    detail::check_keys(training, "training",
                       {"learning_rate", "epochs", "batch_size", "samples_per_tile",
                        "seed"});
    cfg.training.hyper.learning_rate =
        detail::require<double>(training, "training", "learning_rate");
    cfg.training.hyper.epochs = detail::require<std::uint32_t>(training, "training", "epochs");
    cfg.training.hyper.batch_size =
        detail::require<std::uint32_t>(training, "training", "batch_size");
    cfg.training.samples_per_tile = training.value("samples_per_tile", 1000u);
    cfg.training.seed = detail::require<std::uint64_t>(training, "training", "seed");
    cfg.training.hyper.validate();

    const json& folds = j.at("folds");
    detail::check_keys(folds, "folds", {"k"});
    cfg.fold_k = detail::require<int>(folds, "folds", "k");
    if (cfg.fold_k < 3) throw ValidationError("folds.k must be at least 3");
    if (std::size_t(cfg.fold_k) > cfg.scene.countries.size())
        throw ValidationError("folds.k exceeds the number of countries");

    const json& st = j.at("stitch");
    detail::check_keys(st, "stitch", {"window", "crop_margin"});
    cfg.tiling.window = detail::require<std::uint32_t>(st, "stitch", "window");
    cfg.tiling.crop_margin = detail::require<std::uint32_t>(st, "stitch", "crop_margin");
    cfg.tiling.validate();

    if (j.contains("evaluate")) {
        detail::check_keys(j.at("evaluate"), "evaluate", {"num_classes"});
        cfg.num_classes = j.at("evaluate").value("num_classes", 8u);
    }
    if (j.contains("fuse")) {
        detail::check_keys(j.at("fuse"), "fuse", {"fallback_class"});
        cfg.fuse_fallback = j.at("fuse").value("fallback_class", std::int16_t(6));
    }
    if (j.contains("dhs")) {
        const json& d = j.at("dhs");
        detail::check_keys(d, "dhs", {"clusters", "draws", "seed", "perturbation"});
        DhsConfig dc;
        fs::path clusters = detail::require<std::string>(d, "dhs", "clusters");
        if (clusters.is_relative() && !config_dir.empty())
            clusters = config_dir / clusters;
        dc.clusters = clusters;
        dc.draws = d.value("draws", std::size_t(20));
        dc.seed = detail::require<std::uint64_t>(d, "dhs", "seed");
        if (d.contains("perturbation")) {
            const json& p = d.at("perturbation");
            detail::check_keys(p, "dhs.perturbation",
                               {"urban_rmax", "rural_rmax", "rural_far_rmax",
                                "rural_far_fraction", "distance_floor"});
            dc.perturbation.urban_rmax = p.value("urban_rmax", 2000.0);
            dc.perturbation.rural_rmax = p.value("rural_rmax", 5000.0);
            dc.perturbation.rural_far_rmax = p.value("rural_far_rmax", 10000.0);
            dc.perturbation.rural_far_fraction = p.value("rural_far_fraction", 0.01);
            dc.perturbation.distance_floor = p.value("distance_floor", 5.0);
        }
        dc.perturbation.validate();
        // Referenced inputs must exist before any stage runs.
        if (!fs::exists(dc.clusters))
            throw ValidationError("dhs.clusters path does not exist: " +
                                  dc.clusters.string());
        cfg.dhs = std::move(dc);
    }
    return cfg;
}

inline PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("config is not valid JSON: " + std::string(e.what()));
    }
    return parse_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Stage execution and run manifest
// ---------------------------------------------------------------------------

struct Manifest {
    json doc;
    bool ok = false;
};

namespace detail {

struct StageOutputs {
    std::vector<fs::path> files; // relative to the run directory
};

inline raster::TileGrid build_grid(const SceneConfig& scene) {
    double x = 0.0;
    struct Range {
        double x0, x1;
        std::string code;
    };
    std::vector<Range> ranges;
    for (const auto& c : scene.countries) {
        const double w = double(c.tiles_x) * raster::kTileSpacingM;
        ranges.push_back({x, x + w, c.code});
        x += w;
    }
    const double height =
        double(scene.countries.front().tiles_y) * raster::kTileSpacingM;
    raster::WorldRect bbox{0.0, 0.0, x, height};
    return raster::make_grid(bbox, [ranges](double wx, double) {
        for (const auto& r : ranges)
            if (wx >= r.x0 && wx < r.x1) return r.code;
        return ranges.back().code;
    });
}

inline raster::SyntheticSceneSpec tile_scene_spec(const PipelineConfig& cfg,
                                                  const raster::GridTile& tile) {
    raster::SyntheticSceneSpec spec;
    spec.width = tile.width_px;
    spec.height = tile.height_px;
    spec.num_years = cfg.scene.num_years;
    spec.band_names = cfg.scene.bands;
    spec.background_class = cfg.scene.background_class;
    spec.spectra = cfg.scene.spectra;
    spec.cloud_fraction = cfg.scene.cloud_fraction;
    spec.smod_cell_px = cfg.scene.smod_cell_px;
    spec.seed = derive_seed({cfg.seed, 0x5CE2Eull, hash_bytes(tile.id)});
    spec.transform = tile.transform();
    spec.blobs = cfg.scene.blobs;
    // Deterministic per-tile placement jitter, clamped so blobs stay inside.
    for (std::size_t b = 0; b < spec.blobs.size(); ++b) {
        auto& blob = spec.blobs[b];
        const double jx =
            (unit_at({cfg.seed, 0x7177E2ull, hash_bytes(tile.id), b, 0}) * 2.0 - 1.0) *
            cfg.scene.jitter_px;
        const double jy =
            (unit_at({cfg.seed, 0x7177E2ull, hash_bytes(tile.id), b, 1}) * 2.0 - 1.0) *
            cfg.scene.jitter_px;
        blob.cx = std::clamp(blob.cx + jx, blob.radius, double(spec.width) - blob.radius);
        blob.cy = std::clamp(blob.cy + jy, blob.radius, double(spec.height) - blob.radius);
    }
    return spec;
}

inline fs::path tile_dir(const fs::path& root, const raster::GridTile& tile) {
    return root / "tiles" / tile.id;
}

// Assembles per-tile label rasters into one continental raster.
inline raster::LabelRaster
mosaic_labels(const raster::TileGrid& grid,
              const std::function<raster::LabelRaster(const raster::GridTile&)>& load) {
    if (grid.tiles.empty()) throw EmptyInputError("mosaic of an empty grid");
    raster::WorldRect extent = grid.tiles.front().bounds;
    for (const auto& t : grid.tiles) {
        extent.min_x = std::min(extent.min_x, t.bounds.min_x);
        extent.min_y = std::min(extent.min_y, t.bounds.min_y);
        extent.max_x = std::max(extent.max_x, t.bounds.max_x);
        extent.max_y = std::max(extent.max_y, t.bounds.max_y);
    }
    const double px = grid.pixel_size_m;
    const auto width = std::uint32_t(std::llround(extent.width() / px));
    const auto height = std::uint32_t(std::llround(extent.height() / px));
    raster::GeoTransform t;
    t.origin_x = extent.min_x;
    t.origin_y = extent.max_y;
    t.pixel_width = px;
    t.pixel_height = -px;
    raster::LabelRaster out =
        raster::LabelRaster::create(width, height, t, raster::kIgnoreLabel);
    for (const auto& tile : grid.tiles) {
        const raster::LabelRaster l = load(tile);
        const auto x_off = std::uint32_t(std::llround((tile.bounds.min_x - extent.min_x) / px));
        const auto y_off = std::uint32_t(std::llround((extent.max_y - tile.bounds.max_y) / px));
        if (l.width != tile.width_px || l.height != tile.height_px)
            throw ShapeError("tile raster does not match grid dimensions: " + tile.id);
        for (std::uint32_t y = 0; y < l.height; ++y)
            for (std::uint32_t x = 0; x < l.width; ++x)
                out.set(x_off + x, y_off + y, l.at(x, y));
        out.num_classes = std::max(out.num_classes, l.num_classes);
    }
    return out;
}

} // namespace detail

// Executes the full staged run: scene synthesis, median compositing, label
// remap and settlement fusion, fold assignment, per-rotation training,
// smooth-tiled prediction of every test tile, evaluation, and the optional
// survey comparison. Every output is content-digested into the manifest so a
// rerun can be verified byte for byte.
inline Manifest run_pipeline(const PipelineConfig& cfg) {
    const fs::path root = cfg.output_dir;
    fs::create_directories(root);
    const unsigned threads =
        cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());

    Manifest manifest;
    manifest.doc["seed"] = cfg.seed;
    manifest.doc["stages"] = json::array();

    const raster::TileGrid grid = detail::build_grid(cfg.scene);
    const std::size_t n_tiles = grid.tiles.size();

    std::string current_stage;
    const auto record_stage = [&](const std::string& name,
                                  std::vector<fs::path> files) {
        std::sort(files.begin(), files.end());
        json outputs = json::array();
        for (const auto& rel : files)
            outputs.push_back({{"path", rel.generic_string()},
                               {"digest", digest_file(root / rel)}});
        manifest.doc["stages"].push_back({{"name", name}, {"outputs", outputs}});
    };

    try {
        // -- synth ------------------------------------------------------
        current_stage = "synth";
        {
            std::vector<fs::path> files;
            std::mutex files_mutex;
            detail::parallel_for(n_tiles, threads, [&](std::size_t i) {
                const auto& tile = grid.tiles[i];
                const fs::path dir = detail::tile_dir(root, tile);
                fs::create_directories(dir);
                const raster::SyntheticScene scene =
                    raster::gen_synthetic_scene(detail::tile_scene_spec(cfg, tile));
                std::vector<fs::path> local;
                for (std::size_t y = 0; y < scene.years.size(); ++y) {
                    const fs::path p = dir / ("year" + std::to_string(y) + ".hurt");
                    raster::write_tile(scene.years[y], p);
                    local.push_back(fs::relative(p, root));
                }
                const fs::path truth_p = dir / "truth.hurt";
                raster::write_tile(scene.truth, truth_p);
                local.push_back(fs::relative(truth_p, root));
                const fs::path smod_p = dir / "smod.hurt";
                raster::write_tile(scene.smod, smod_p);
                local.push_back(fs::relative(smod_p, root));
                const fs::path raw_p = dir / "esri_raw.hurt";
                raster::write_tile(preprocess::esri_raw_from_truth(scene.truth), raw_p);
                local.push_back(fs::relative(raw_p, root));
                std::lock_guard lock(files_mutex);
                for (auto& p : local) files.push_back(std::move(p));
            });
            // Grid description and country table for the fold stage.
            json jgrid = json::array();
            for (const auto& t : grid.tiles)
                jgrid.push_back({{"id", t.id},
                                 {"country", t.country},
                                 {"min_x", t.bounds.min_x},
                                 {"min_y", t.bounds.min_y},
                                 {"max_x", t.bounds.max_x},
                                 {"max_y", t.bounds.max_y},
                                 {"width_px", t.width_px},
                                 {"height_px", t.height_px}});
            detail::write_text_atomic(root / "grid.json", jgrid.dump(2) + "\n");
            files.push_back("grid.json");
            std::string csv = "code,name,area_km2\n";
            for (const auto& c : cfg.scene.countries) {
                const double area = double(c.tiles_x) * c.tiles_y *
                                    (raster::kTileSpacingM / 1000.0) *
                                    (raster::kTileSpacingM / 1000.0);
                csv += c.code + "," + c.name + "," + std::to_string(area) + "\n";
            }
            detail::write_text_atomic(root / "countries.csv", csv);
            files.push_back("countries.csv");
            record_stage("synth", std::move(files));
        }

        // -- composite ---------------------------------------------------
        current_stage = "composite";
        {
            std::vector<fs::path> files(n_tiles);
            detail::parallel_for(n_tiles, threads, [&](std::size_t i) {
                const auto& tile = grid.tiles[i];
                const fs::path dir = detail::tile_dir(root, tile);
                preprocess::ObservationStack stack;
                for (std::uint32_t y = 0; y < cfg.scene.num_years; ++y)
                    stack.observations.push_back(raster::read_raster_tile(
                        dir / ("year" + std::to_string(y) + ".hurt")));
                const raster::RasterTile composite = preprocess::median_composite(stack);
                const fs::path p = dir / "composite.hurt";
                raster::write_tile(composite, p);
                files[i] = fs::relative(p, root);
            });
            record_stage("composite", std::move(files));
        }

        // -- fuse ----------------------------------------------------------
        current_stage = "fuse";
        {
            const preprocess::ClassMap cm = preprocess::ClassMap::esri_default();
            preprocess::SmodMerge merge;
            merge.fallback_class = cfg.fuse_fallback;
            std::vector<fs::path> files(n_tiles);
            detail::parallel_for(n_tiles, threads, [&](std::size_t i) {
                const auto& tile = grid.tiles[i];
                const fs::path dir = detail::tile_dir(root, tile);
                const raster::LabelRaster raw =
                    raster::read_label_raster(dir / "esri_raw.hurt");
                const raster::LabelRaster smod =
                    raster::read_label_raster(dir / "smod.hurt");
                const raster::LabelRaster remapped = preprocess::remap_esri(raw, cm);
                const raster::LabelRaster fused = preprocess::fuse_builtarea(
                    remapped, smod, merge, cm.built_area_interim);
                const fs::path p = dir / "labels.hurt";
                raster::write_tile(fused, p);
                files[i] = fs::relative(p, root);
            });
            record_stage("fuse", std::move(files));
        }

        // -- folds ----------------------------------------------------------
        current_stage = "folds";
        spatialcv::FoldAssignment fa;
        std::vector<spatialcv::FoldConfig> configs;
        {
            const auto countries = spatialcv::read_countries_csv(root / "countries.csv");
            fa = spatialcv::assign_folds(countries, cfg.fold_k);
            configs = spatialcv::fold_configs(cfg.fold_k);
            json j = {{"assignment", fa},
                      {"configs", configs},
                      {"notation", spatialcv::configs_notation(configs)}};
            detail::write_text_atomic(root / "folds.json", j.dump(2) + "\n");
            record_stage("folds", {"folds.json"});
        }

        // -- train ----------------------------------------------------------
        current_stage = "train";
        {
            fs::create_directories(root / "models");
            std::vector<fs::path> files(configs.size());
            detail::parallel_for(configs.size(), threads, [&](std::size_t ci) {
                const auto& fc = configs[ci];
                const spatialcv::SplitTiles split = spatialcv::tiles_for_split(grid, fa, fc);
                if (split.train.empty())
                    throw EmptyInputError("fold config " + fc.notation() +
                                          " has no training tiles");

                std::vector<std::uint64_t> class_counts(cfg.num_classes, 0);
                model::FeatureMatrix features;
                features.dim = cfg.features.dim(cfg.scene.bands.size());
                std::vector<std::int16_t> labels;
                for (const auto& tile : split.train) {
                    const fs::path dir = detail::tile_dir(root, tile);
                    const raster::RasterTile composite = raster::normalize_bands(
                        raster::read_raster_tile(dir / "composite.hurt"),
                        cfg.normalization);
                    const raster::LabelRaster tile_labels =
                        raster::read_label_raster(dir / "labels.hurt");
                    for (std::int16_t v : tile_labels.values)
                        if (v >= 0 && std::uint32_t(v) < cfg.num_classes)
                            ++class_counts[std::size_t(v)];
                    const model::FeatureMatrix tile_features =
                        model::extract_features(composite, cfg.features);
                    Rng rng(derive_seed({cfg.training.seed, 0x7AB1Eull,
                                         std::uint64_t(fc.test), hash_bytes(tile.id)}));
                    for (std::uint32_t s = 0; s < cfg.training.samples_per_tile; ++s) {
                        const std::size_t row = std::size_t(rng.below(tile_features.rows));
                        const auto src = tile_features.row(row);
                        features.data.insert(features.data.end(), src.begin(), src.end());
                        labels.push_back(tile_labels.values[row]);
                    }
                }
                features.rows = labels.size();

                std::uint64_t total = 0;
                for (std::uint64_t c : class_counts) total += c;
                if (total == 0) throw EmptyInputError("training tiles have no scored pixels");
                std::vector<double> p(cfg.num_classes);
                for (std::size_t k = 0; k < p.size(); ++k)
                    p[k] = double(class_counts[k]) / double(total);
                const model::ClassWeights weights = model::compute_weights(p, cfg.weighting);

                model::BaselineParams params = model::train_baseline(
                    features, labels, weights, cfg.training.hyper,
                    derive_seed({cfg.training.seed, 0x7261ull, std::uint64_t(fc.test)}),
                    cfg.num_classes);
                params.features = cfg.features;
                params.norm_ranges = cfg.normalization;
                const fs::path p_out =
                    root / "models" / ("model_test" + std::to_string(fc.test) + ".json");
                model::save_params(params, p_out);
                files[ci] = fs::relative(p_out, root);
            });
            record_stage("train", std::move(files));
        }

        // -- stitch ----------------------------------------------------------
        current_stage = "stitch";
        {
            fs::create_directories(root / "predictions");
            // Each tile is predicted by the model whose test fold holds it.
            std::map<std::string, const raster::GridTile*> by_id;
            for (const auto& t : grid.tiles) by_id[t.id] = &t;
            std::vector<std::pair<std::string, int>> job_ids;
            for (const auto& fc : configs) {
                const spatialcv::SplitTiles split = spatialcv::tiles_for_split(grid, fa, fc);
                for (const auto& tile : split.test)
                    job_ids.emplace_back(tile.id, fc.test);
            }

            std::map<int, model::BaselineParams> models;
            for (const auto& fc : configs)
                models[fc.test] = model::load_params(
                    root / "models" / ("model_test" + std::to_string(fc.test) + ".json"));

            std::vector<fs::path> files(job_ids.size());
            detail::parallel_for(job_ids.size(), threads, [&](std::size_t i) {
                const auto& [tile_id, fold] = job_ids[i];
                const raster::GridTile& tile = *by_id.at(tile_id);
                const model::BaselineParams& params = models.at(fold);
                const raster::RasterTile composite = raster::normalize_bands(
                    raster::read_raster_tile(detail::tile_dir(root, tile) / "composite.hurt"),
                    params.norm_ranges);
                raster::LabelRaster pred = stitch::smooth_predict(
                    stitch::baseline_classifier(params), composite, cfg.tiling);
                pred.num_classes = std::uint8_t(cfg.num_classes);
                const fs::path p = root / "predictions" / (tile.id + ".hurt");
                raster::write_tile(pred, p);
                files[i] = fs::relative(p, root);
            });
            record_stage("stitch", std::move(files));
        }

        // -- evaluate ---------------------------------------------------------
        current_stage = "evaluate";
        {
            fs::create_directories(root / "reports");
            std::vector<metrics::CountryScore> scores;
            for (const auto& fc : configs) {
                const spatialcv::SplitTiles split = spatialcv::tiles_for_split(grid, fa, fc);
                for (const auto& tile : split.test) {
                    const raster::LabelRaster pred = raster::read_label_raster(
                        root / "predictions" / (tile.id + ".hurt"));
                    const raster::LabelRaster truth = raster::read_label_raster(
                        detail::tile_dir(root, tile) / "truth.hurt");
                    scores.push_back({tile.country,
                                      metrics::confusion(pred, truth, cfg.num_classes),
                                      fc.test});
                }
            }
            const metrics::CountryReports reports = metrics::per_country_report(scores, fa);
            json j = {{"continental", reports.continental},
                      {"confusion", reports.merged},
                      {"countries", reports.countries}};
            detail::write_text_atomic(root / "reports" / "evaluation.json",
                                      j.dump(2) + "\n");
            detail::write_text_atomic(root / "reports" / "per_country.csv",
                                      metrics::distribution_csv(reports));
            record_stage("evaluate",
                         {fs::path("reports") / "evaluation.json",
                          fs::path("reports") / "per_country.csv"});
        }

        // -- dhs (optional) ----------------------------------------------------
        if (cfg.dhs) {
            current_stage = "dhs";
            const auto clusters = dhs::read_clusters_csv(cfg.dhs->clusters);
            const raster::LabelRaster pred_mosaic =
                detail::mosaic_labels(grid, [&](const raster::GridTile& t) {
                    return raster::read_label_raster(root / "predictions" /
                                                     (t.id + ".hurt"));
                });
            const raster::LabelRaster truth_mosaic =
                detail::mosaic_labels(grid, [&](const raster::GridTile& t) {
                    return raster::read_label_raster(detail::tile_dir(root, t) /
                                                     "truth.hurt");
                });
            const raster::LabelRaster map_a = dhs::settlement_map(pred_mosaic);
            const raster::LabelRaster prior = dhs::settlement_map(truth_mosaic);
            const dhs::DhsReport report =
                dhs::evaluate_maps(clusters, map_a, nullptr, prior,
                                   cfg.dhs->perturbation, cfg.dhs->draws, cfg.dhs->seed);
            detail::write_text_atomic(root / "reports" / "dhs.json",
                                      json(report).dump(2) + "\n");
            record_stage("dhs", {fs::path("reports") / "dhs.json"});
        }

        manifest.doc["status"] = "ok";
        manifest.ok = true;
    } catch (const std::exception& e) {
        manifest.doc["status"] = "failed";
        manifest.doc["failed_stage"] = current_stage;
        manifest.doc["error"] = e.what();
        manifest.ok = false;
    }

    detail::write_text_atomic(root / "manifest.json", manifest.doc.dump(2) + "\n");
    return manifest;
}

inline Manifest run_pipeline(const json& config_json, const fs::path& config_dir = {},
                             const std::optional<fs::path>& out_override = {},
                             unsigned threads_override = 0) {
    PipelineConfig cfg = parse_config(config_json, config_dir);
    if (out_override) cfg.output_dir = *out_override;
    if (threads_override) cfg.threads = threads_override;
    // Record what produced the run.
    Digest d;
    const std::string dumped = config_json.dump();
    d.update(dumped.data(), dumped.size());
    Manifest m = run_pipeline(cfg);
    m.doc["config_digest"] = d.hex();
    detail::write_text_atomic(cfg.output_dir / "manifest.json", m.doc.dump(2) + "\n");
    return m;
}

} // namespace hurpipe::pipeline
