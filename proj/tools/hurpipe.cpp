// hurpipe: command-line front end for the urban-rural mapping toolkit.
//
// Subcommands cover the individual stages (synth, composite, fuse-labels,
// folds, train, predict, stitch, evaluate, dhs-eval) plus a one-shot
// `pipeline` command driven by a JSON config.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hurpipe/dhs.hpp"
#include "hurpipe/metrics.hpp"
#include "hurpipe/model.hpp"
#include "hurpipe/pipeline.hpp"
#include "hurpipe/preprocess.hpp"
#include "hurpipe/raster.hpp"
#include "hurpipe/spatialcv.hpp"
#include "hurpipe/stitch.hpp"
#include "hurpipe/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hurpipe;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    json j;
    in >> j;
    return j;
}

std::vector<std::pair<double, double>> parse_ranges(const std::string& spec) {
    std::vector<std::pair<double, double>> out;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const std::size_t comma = spec.find(',', pos);
        const std::string item = spec.substr(pos, comma - pos);
        const std::size_t colon = item.find(':');
        if (colon == std::string::npos)
            throw ConfigError("range must be min:max, got '" + item + "'");
        out.emplace_back(std::stod(item.substr(0, colon)),
                         std::stod(item.substr(colon + 1)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

raster::RasterTile load_normalized(const fs::path& path,
                                   const std::vector<std::pair<double, double>>& ranges) {
    const raster::RasterTile t = raster::read_raster_tile(path);
    return raster::normalize_bands(t, ranges);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"High-resolution urban-rural mapping toolkit"};
    app.require_subcommand(1);

    // ---- synth -----------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a deterministic synthetic scene");
    fs::path synth_spec, synth_out;
    std::uint64_t synth_seed = 0;
    bool synth_seed_set = false;
    synth->add_option("--spec", synth_spec, "Scene spec JSON")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Override the spec seed")
        ->each([&](const std::string&) { synth_seed_set = true; });

    // ---- composite ---------------------------------------------------------
    auto* composite = app.add_subcommand("composite", "Median-composite a tile time series");
    std::vector<fs::path> composite_inputs, composite_masks;
    fs::path composite_out;
    composite->add_option("--inputs", composite_inputs, "Observation tiles, in time order")
        ->required()
        ->expected(-1);
    composite->add_option("--masks", composite_masks,
                          "Optional per-observation quality masks (label tiles, nonzero = bad)");
    composite->add_option("--out", composite_out, "Output composite tile")->required();

    // ---- fuse-labels ---------------------------------------------------------
    auto* fuse = app.add_subcommand("fuse-labels",
                                    "Remap raw land-cover codes and split Built Area into rural/urban");
    fs::path fuse_esri, fuse_smod, fuse_out, fuse_classmap;
    int fuse_fallback = 6;
    fuse->add_option("--esri", fuse_esri, "Raw land-cover label tile")->required();
    fuse->add_option("--smod", fuse_smod, "Coarse settlement label tile")->required();
    fuse->add_option("--out", fuse_out, "Output label tile")->required();
    fuse->add_option("--classmap", fuse_classmap, "Class map JSON (default: built-in)");
    fuse->add_option("--fallback", fuse_fallback,
                     "Settlement class when the overlay is water/missing (6 or 7)");

    // ---- folds -----------------------------------------------------------
    auto* folds = app.add_subcommand("folds", "Assign countries to folds by area");
    fs::path folds_countries, folds_out;
    int folds_k = 5;
    folds->add_option("--countries", folds_countries, "CSV: code,name,area_km2")->required();
    folds->add_option("-k,--folds", folds_k, "Fold count");
    folds->add_option("--out", folds_out, "Output JSON (default: stdout)");

    // ---- train -----------------------------------------------------------
    auto* train = app.add_subcommand("train", "Train the baseline pixel classifier");
    std::vector<fs::path> train_inputs, train_labels;
    fs::path train_out;
    std::string train_weighting = "inverse", train_ranges;
    std::uint32_t train_window = 1, train_epochs = 10, train_batch = 256;
    std::uint32_t train_classes = 8;
    double train_lr = 0.1;
    std::uint64_t train_seed = 0;
    train->add_option("--features", train_inputs, "Composite tiles")->required()->expected(-1);
    train->add_option("--labels", train_labels, "Label tiles, one per composite")
        ->required()
        ->expected(-1);
    train->add_option("--weighting", train_weighting, "complement | neglog | inverse");
    train->add_option("--norm", train_ranges, "Per-band min:max list, e.g. 0:1,0:1,0:300")
        ->required();
    train->add_option("--context-window", train_window, "Odd context window (1 = raw only)");
    train->add_option("--learning-rate", train_lr, "Gradient step size");
    train->add_option("--epochs", train_epochs, "Training epochs");
    train->add_option("--batch-size", train_batch, "Mini-batch size");
    train->add_option("--classes", train_classes, "Number of target classes");
    train->add_option("--seed", train_seed, "Training seed")->required();
    train->add_option("--out", train_out, "Output params JSON")->required();

    // ---- predict -----------------------------------------------------------
    auto* predict = app.add_subcommand("predict", "Direct whole-raster prediction");
    fs::path predict_params, predict_in, predict_out;
    predict->add_option("--params", predict_params, "Trained params JSON")->required();
    predict->add_option("--in", predict_in, "Composite tile")->required();
    predict->add_option("--out", predict_out, "Output label tile")->required();

    // ---- stitch -----------------------------------------------------------
    auto* stitch_cmd = app.add_subcommand("stitch", "Smooth-tiled prediction of a large raster");
    fs::path stitch_params, stitch_in, stitch_out;
    std::uint32_t stitch_window = 250, stitch_margin = 25;
    stitch_cmd->add_option("--params", stitch_params, "Trained params JSON")->required();
    stitch_cmd->add_option("--in", stitch_in, "Input raster tile")->required();
    stitch_cmd->add_option("--out", stitch_out, "Output label tile")->required();
    stitch_cmd->add_option("--window", stitch_window, "Window size in pixels");
    stitch_cmd->add_option("--margin", stitch_margin, "Crop margin in pixels");

    // ---- evaluate -----------------------------------------------------------
    auto* evaluate = app.add_subcommand("evaluate", "Score a prediction against truth labels");
    fs::path eval_pred, eval_truth, eval_report;
    std::uint32_t eval_classes = 8;
    evaluate->add_option("--pred", eval_pred, "Predicted label tile")->required();
    evaluate->add_option("--truth", eval_truth, "Truth label tile")->required();
    evaluate->add_option("--classes", eval_classes, "Number of classes");
    evaluate->add_option("--report", eval_report, "Output JSON (default: stdout)");

    // ---- dhs-eval -----------------------------------------------------------
    auto* dhs_cmd = app.add_subcommand("dhs-eval",
                                       "Perturbation-aware survey comparison of one or two maps");
    fs::path dhs_clusters, dhs_map_a, dhs_map_b, dhs_prior, dhs_report;
    std::uint64_t dhs_seed = 0;
    std::size_t dhs_draws = 20;
    double dhs_urban_rmax = 2000.0, dhs_rural_rmax = 5000.0, dhs_far_rmax = 10000.0;
    double dhs_far_fraction = 0.01, dhs_floor = 5.0;
    dhs_cmd->add_option("--clusters", dhs_clusters, "CSV: id,lon,lat,label,year,country")
        ->required();
    dhs_cmd->add_option("--map-a", dhs_map_a, "3-class map under test")->required();
    dhs_cmd->add_option("--map-b", dhs_map_b, "Optional second map for paired comparison");
    dhs_cmd->add_option("--prior", dhs_prior, "3-class settlement prior map")->required();
    dhs_cmd->add_option("--seed", dhs_seed, "Evaluation seed")->required();
    dhs_cmd->add_option("--draws", dhs_draws, "Posterior draws per cluster");
    dhs_cmd->add_option("--urban-rmax", dhs_urban_rmax, "Urban displacement radius (m)");
    dhs_cmd->add_option("--rural-rmax", dhs_rural_rmax, "Rural displacement radius (m)");
    dhs_cmd->add_option("--rural-far-rmax", dhs_far_rmax, "Far rural displacement radius (m)");
    dhs_cmd->add_option("--rural-far-fraction", dhs_far_fraction, "Far rural fraction");
    dhs_cmd->add_option("--distance-floor", dhs_floor, "Density floor distance (m)");
    dhs_cmd->add_option("--report", dhs_report, "Output JSON (default: stdout)");

    // ---- pipeline -----------------------------------------------------------
    auto* pipe = app.add_subcommand("pipeline", "Run the full staged pipeline from a config");
    fs::path pipe_config;
    std::optional<fs::path> pipe_out;
    unsigned pipe_threads = 0;
    pipe->add_option("--config", pipe_config, "Pipeline config JSON")->required();
    pipe->add_option("--out", pipe_out, "Override the config output_dir");
    pipe->add_option("--threads", pipe_threads, "Worker threads (default: logical cores)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            auto spec = read_json(synth_spec).get<raster::SyntheticSceneSpec>();
            if (synth_seed_set) spec.seed = synth_seed;
            const raster::SyntheticScene scene = raster::gen_synthetic_scene(spec);
            fs::create_directories(synth_out);
            for (std::size_t y = 0; y < scene.years.size(); ++y)
                raster::write_tile(scene.years[y],
                                   synth_out / ("year" + std::to_string(y) + ".hurt"));
            raster::write_tile(scene.truth, synth_out / "truth.hurt");
            raster::write_tile(scene.smod, synth_out / "smod.hurt");
            raster::write_tile(preprocess::esri_raw_from_truth(scene.truth),
                               synth_out / "esri_raw.hurt");
            std::cout << "wrote scene (" << scene.years.size() << " years) to "
                      << synth_out.string() << "\n";
        } else if (*composite) {
            preprocess::ObservationStack stack;
            for (const auto& p : composite_inputs)
                stack.observations.push_back(raster::read_raster_tile(p));
            if (!composite_masks.empty()) {
                if (composite_masks.size() != stack.observations.size())
                    throw ConfigError("need one mask per observation");
                for (std::size_t i = 0; i < composite_masks.size(); ++i) {
                    const raster::LabelRaster m =
                        raster::read_label_raster(composite_masks[i]);
                    std::vector<std::uint8_t> mask(m.values.size());
                    for (std::size_t j = 0; j < mask.size(); ++j)
                        mask[j] = m.values[j] != 0;
                    stack.observations[i] =
                        preprocess::apply_quality_mask(stack.observations[i], mask);
                }
            }
            raster::write_tile(preprocess::median_composite(stack), composite_out);
            std::cout << "wrote " << composite_out.string() << "\n";
        } else if (*fuse) {
            const preprocess::ClassMap cm =
                fuse_classmap.empty() ? preprocess::ClassMap::esri_default()
                                      : read_json(fuse_classmap).get<preprocess::ClassMap>();
            preprocess::SmodMerge merge;
            merge.fallback_class = std::int16_t(fuse_fallback);
            const raster::LabelRaster remapped =
                preprocess::remap_esri(raster::read_label_raster(fuse_esri), cm);
            const raster::LabelRaster fused = preprocess::fuse_builtarea(
                remapped, raster::read_label_raster(fuse_smod), merge,
                cm.built_area_interim);
            raster::write_tile(fused, fuse_out);
            std::cout << "wrote " << fuse_out.string() << "\n";
        } else if (*folds) {
            const auto countries = spatialcv::read_countries_csv(folds_countries);
            const spatialcv::FoldAssignment fa = spatialcv::assign_folds(countries, folds_k);
            const auto configs = spatialcv::fold_configs(folds_k);
            const json j = {{"assignment", fa},
                            {"configs", configs},
                            {"notation", spatialcv::configs_notation(configs)}};
            if (folds_out.empty()) {
                std::cout << j.dump(2) << "\n";
            } else {
                std::ofstream out(folds_out);
                out << j.dump(2) << "\n";
                std::cout << "wrote " << folds_out.string() << "\n";
            }
        } else if (*train) {
            if (train_inputs.size() != train_labels.size())
                throw ConfigError("need one label tile per composite tile");
            const auto ranges = parse_ranges(train_ranges);
            model::FeatureConfig fcfg;
            fcfg.context_window = train_window;
            model::FeatureMatrix features;
            std::vector<std::int16_t> labels;
            std::vector<std::uint64_t> counts(train_classes, 0);
            for (std::size_t i = 0; i < train_inputs.size(); ++i) {
                const raster::RasterTile tile = load_normalized(train_inputs[i], ranges);
                const raster::LabelRaster l = raster::read_label_raster(train_labels[i]);
                if (l.pixel_count() != tile.pixel_count())
                    throw ShapeError("labels do not match composite dimensions");
                const model::FeatureMatrix f = model::extract_features(tile, fcfg);
                features.dim = f.dim;
                features.data.insert(features.data.end(), f.data.begin(), f.data.end());
                labels.insert(labels.end(), l.values.begin(), l.values.end());
                for (std::int16_t v : l.values)
                    if (v >= 0 && std::uint32_t(v) < train_classes) ++counts[std::size_t(v)];
            }
            features.rows = labels.size();
            std::uint64_t total = 0;
            for (auto c : counts) total += c;
            if (total == 0) throw EmptyInputError("no scored training pixel");
            std::vector<double> p(train_classes);
            for (std::size_t k = 0; k < p.size(); ++k)
                p[k] = double(counts[k]) / double(total);
            const model::ClassWeights weights = model::compute_weights(
                p, model::weight_strategy_from_string(train_weighting));
            model::Hyperparams hyper{train_lr, train_epochs, train_batch};
            model::BaselineParams params = model::train_baseline(
                features, labels, weights, hyper, train_seed, train_classes);
            params.features = fcfg;
            params.norm_ranges = ranges;
            model::save_params(params, train_out);
            std::cout << "wrote " << train_out.string() << " (final loss "
                      << (params.loss_trace.empty() ? 0.0 : params.loss_trace.back())
                      << ")\n";
        } else if (*predict) {
            const model::BaselineParams params = model::load_params(predict_params);
            const raster::RasterTile tile = load_normalized(predict_in, params.norm_ranges);
            raster::write_tile(model::predict_tile(params, tile), predict_out);
            std::cout << "wrote " << predict_out.string() << "\n";
        } else if (*stitch_cmd) {
            const model::BaselineParams params = model::load_params(stitch_params);
            const raster::RasterTile tile = load_normalized(stitch_in, params.norm_ranges);
            const stitch::TilingScheme scheme{stitch_window, stitch_margin};
            const raster::LabelRaster out = stitch::smooth_predict(
                stitch::baseline_classifier(params), tile, scheme);
            raster::write_tile(out, stitch_out);
            std::cout << "wrote " << stitch_out.string() << "\n";
        } else if (*evaluate) {
            const raster::LabelRaster pred = raster::read_label_raster(eval_pred);
            const raster::LabelRaster truth = raster::read_label_raster(eval_truth);
            const metrics::ConfusionMatrix cm = metrics::confusion(pred, truth, eval_classes);
            const json j = {{"report", metrics::MetricReport::from(cm, "all")},
                            {"confusion", cm}};
            if (eval_report.empty()) {
                std::cout << j.dump(2) << "\n";
            } else {
                std::ofstream out(eval_report);
                out << j.dump(2) << "\n";
                std::cout << "wrote " << eval_report.string() << "\n";
            }
        } else if (*dhs_cmd) {
            const auto clusters = dhs::read_clusters_csv(dhs_clusters);
            // Land-cover maps are projected onto the 3-class settlement
            // scheme; maps already in that scheme pass through unchanged.
            const auto load_map3 = [](const fs::path& p) {
                raster::LabelRaster m = raster::read_label_raster(p);
                for (std::int16_t v : m.values)
                    if (v < 0 || v > 2) return dhs::settlement_map(m);
                m.num_classes = 3;
                return m;
            };
            const raster::LabelRaster map_a = load_map3(dhs_map_a);
            const raster::LabelRaster prior = load_map3(dhs_prior);
            std::optional<raster::LabelRaster> map_b;
            if (!dhs_map_b.empty()) map_b = load_map3(dhs_map_b);
            dhs::PerturbationModel pm{dhs_urban_rmax, dhs_rural_rmax, dhs_far_rmax,
                                      dhs_far_fraction, dhs_floor};
            const dhs::DhsReport report =
                dhs::evaluate_maps(clusters, map_a, map_b ? &*map_b : nullptr, prior, pm,
                                   dhs_draws, dhs_seed);
            const json j = report;
            if (dhs_report.empty()) {
                std::cout << j.dump(2) << "\n";
            } else {
                std::ofstream out(dhs_report);
                out << j.dump(2) << "\n";
                std::cout << "wrote " << dhs_report.string() << "\n";
            }
        } else if (*pipe) {
            const json config = read_json(pipe_config);
            const pipeline::Manifest m = pipeline::run_pipeline(
                config, pipe_config.parent_path(), pipe_out, pipe_threads);
            if (!m.ok) {
                std::cerr << "pipeline failed at stage "
                          << m.doc.value("failed_stage", std::string("?")) << ": "
                          << m.doc.value("error", std::string("unknown error")) << "\n";
                return 1;
            }
            std::cout << "pipeline ok; manifest covers " << m.doc["stages"].size()
                      << " stages\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
