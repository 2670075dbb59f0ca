#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "hurpipe/pipeline.hpp"
#include "support/oracles.hpp"

using namespace hurpipe;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Three one-tile countries, two bands, two years: the smallest continent the
// staged run supports (k = 3).
json mini_config(const fs::path& out_dir) {
    return json{
        {"seed", 424242},
        {"output_dir", out_dir.string()},
        {"scene",
         {{"countries",
           json::array({{{"code", "AAA"}, {"name", "Alpha"}, {"tiles_x", 1}, {"tiles_y", 1}},
                        {{"code", "BBB"}, {"name", "Beta"}, {"tiles_x", 1}, {"tiles_y", 1}},
                        {{"code", "CCC"}, {"name", "Gamma"}, {"tiles_x", 1}, {"tiles_y", 1}}})},
          {"num_years", 2},
          {"cloud_fraction", 0.03},
          {"bands", json::array({"red", "nir"})},
          {"background_class", 5},
          {"spectra",
           json::array({{{"class", 5}, {"means", {0.45, 0.55}}, {"sigma", 0.04}},
                        {{"class", 0}, {"means", {0.05, 0.1}}, {"sigma", 0.03}},
                        {{"class", 1}, {"means", {0.2, 0.8}}, {"sigma", 0.04}},
                        {{"class", 2}, {"means", {0.3, 0.65}}, {"sigma", 0.04}},
                        {{"class", 3}, {"means", {0.6, 0.7}}, {"sigma", 0.04}},
                        {{"class", 4}, {"means", {0.85, 0.3}}, {"sigma", 0.04}},
                        {{"class", 6}, {"means", {0.65, 0.4}}, {"sigma", 0.04}},
                        {{"class", 7}, {"means", {0.9, 0.15}}, {"sigma", 0.04}}})},
          {"blobs",
           json::array({{{"class", 0}, {"cx", 150.0}, {"cy", 150.0}, {"radius", 70.0}},
                        {{"class", 1}, {"cx", 500.0}, {"cy", 120.0}, {"radius", 70.0}},
                        {{"class", 2}, {"cx", 850.0}, {"cy", 150.0}, {"radius", 60.0}},
                        {{"class", 3}, {"cx", 150.0}, {"cy", 500.0}, {"radius", 70.0}},
                        {{"class", 4}, {"cx", 850.0}, {"cy", 500.0}, {"radius", 70.0}},
                        {{"class", 7}, {"cx", 250.0}, {"cy", 850.0}, {"radius", 80.0}},
                        {{"class", 6}, {"cx", 750.0}, {"cy", 850.0}, {"radius", 80.0}}})},
          {"jitter_px", 0.0},
          {"smod_cell_px", 100}}},
        {"normalization", json::array({{0.0, 1.0}, {0.0, 1.0}})},
        {"features", {{"context_window", 3}, {"include_raw", true}}},
        {"weighting", "inverse"},
        {"training",
         {{"learning_rate", 0.3},
          {"epochs", 40},
          {"batch_size", 128},
          {"samples_per_tile", 2000},
          {"seed", 7}}},
        {"folds", {{"k", 3}}},
        {"stitch", {{"window", 250}, {"crop_margin", 25}}},
        {"evaluate", {{"num_classes", 8}}},
    };
}

} // namespace

TEST_CASE("config validation") {
    const fs::path dir = oracles::scratch_dir("pipeline_validate");
    json cfg = mini_config(dir / "run");

    SECTION("a well-formed config parses") {
        REQUIRE_NOTHROW(pipeline::parse_config(cfg));
    }
    SECTION("unknown top-level keys are hard errors") {
        cfg["wieghting"] = "inverse"; // typo
        REQUIRE_THROWS_AS(pipeline::parse_config(cfg), ValidationError);
    }
    SECTION("unknown nested keys are hard errors") {
        cfg["training"]["learning_rte"] = 0.5;
        REQUIRE_THROWS_AS(pipeline::parse_config(cfg), ValidationError);
    }
    SECTION("missing required keys are hard errors") {
        cfg.erase("seed");
        REQUIRE_THROWS_AS(pipeline::parse_config(cfg), ValidationError);
    }
    SECTION("normalization must cover every band") {
        cfg["normalization"] = json::array({{0.0, 1.0}});
        REQUIRE_THROWS_AS(pipeline::parse_config(cfg), ValidationError);
    }
    SECTION("an unknown weighting strategy is rejected") {
        cfg["weighting"] = "sqrt";
        REQUIRE_THROWS_AS(pipeline::parse_config(cfg), ConfigError);
    }
    SECTION("a missing referenced input fails before any stage runs") {
        cfg["dhs"] = {{"clusters", (dir / "missing.csv").string()}, {"seed", 1}};
        REQUIRE_THROWS_AS(pipeline::parse_config(cfg), ValidationError);
        REQUIRE_FALSE(fs::exists(dir / "run"));
    }
    SECTION("k larger than the country count is rejected") {
        cfg["folds"]["k"] = 4;
        REQUIRE_THROWS_AS(pipeline::parse_config(cfg), ValidationError);
    }
}

TEST_CASE("the staged run produces a coherent, reproducible map") {
    const fs::path dir = oracles::scratch_dir("pipeline_run");

    // A small cluster file exercises the optional survey stage. Blob centers
    // are exact because the config uses zero jitter; tile x1_y0 spans
    // x in [10000, 20000) with its urban blob at pixel (250, 850).
    const fs::path clusters_csv = dir / "clusters.csv";
    {
        std::ofstream out(clusters_csv);
        out << "id,lon,lat,label,year,country\n";
        out << "u0,2500,1500,urban,2020,AAA\n";   // tile x0_y0 urban blob
        out << "r0,7500,1500,rural,2020,AAA\n";   // tile x0_y0 rural blob
        out << "u1,12500,1500,urban,2020,BBB\n";  // tile x1_y0
        out << "r1,17500,1500,rural,2020,BBB\n";
        out << "u2,22500,1500,urban,2020,CCC\n";  // tile x2_y0
        out << "r2,27500,1500,rural,2020,CCC\n";
    }

    json cfg = mini_config(dir / "run1");
    cfg["dhs"] = {{"clusters", clusters_csv.string()},
                  {"draws", 20},
                  {"seed", 31},
                  {"perturbation",
                   {{"urban_rmax", 200.0},
                    {"rural_rmax", 300.0},
                    {"rural_far_rmax", 500.0},
                    {"rural_far_fraction", 0.01},
                    {"distance_floor", 5.0}}}};

    const pipeline::Manifest first = pipeline::run_pipeline(cfg);
    INFO(first.doc.dump(2));
    REQUIRE(first.ok);
    REQUIRE(first.doc["stages"].size() == 8); // synth..evaluate + dhs

    SECTION("stage outputs exist and the evaluation is strong") {
        const fs::path run = dir / "run1";
        REQUIRE(fs::exists(run / "manifest.json"));
        REQUIRE(fs::exists(run / "reports" / "evaluation.json"));
        json eval;
        std::ifstream(run / "reports" / "evaluation.json") >> eval;
        REQUIRE(eval["continental"]["accuracy"].get<double>() > 0.9);
        REQUIRE(eval["countries"].size() == 3);

        json dhs_report;
        std::ifstream(run / "reports" / "dhs.json") >> dhs_report;
        REQUIRE(dhs_report["scored"].get<int>() == 6);
        REQUIRE(dhs_report["map_a"]["accuracy"].get<double>() >= 5.0 / 6.0);
    }

    SECTION("a rerun reproduces every output digest") {
        json cfg2 = cfg;
        cfg2["output_dir"] = (dir / "run2").string();
        const pipeline::Manifest second = pipeline::run_pipeline(cfg2);
        REQUIRE(second.ok);
        REQUIRE(first.doc["stages"] == second.doc["stages"]);
    }
}

TEST_CASE("a failing stage is recorded in the manifest") {
    const fs::path dir = oracles::scratch_dir("pipeline_fail");
    // A cluster whose search disk leaves the continent makes the survey
    // stage fail after the earlier stages have succeeded.
    const fs::path clusters_csv = dir / "clusters.csv";
    {
        std::ofstream out(clusters_csv);
        out << "id,lon,lat,label,year,country\n";
        out << "edge,50,50,urban,2020,AAA\n";
    }
    json cfg = mini_config(dir / "run");
    cfg["dhs"] = {{"clusters", clusters_csv.string()},
                  {"seed", 1},
                  {"perturbation",
                   {{"urban_rmax", 200.0},
                    {"rural_rmax", 300.0},
                    {"rural_far_rmax", 500.0}}}};
    const pipeline::Manifest m = pipeline::run_pipeline(cfg);
    REQUIRE_FALSE(m.ok);
    REQUIRE(m.doc["failed_stage"] == "dhs");
    json manifest_on_disk;
    std::ifstream(dir / "run" / "manifest.json") >> manifest_on_disk;
    REQUIRE(manifest_on_disk["status"] == "failed");
}
