#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <set>

#include "hurpipe/dhs.hpp"
#include "support/oracles.hpp"

using namespace hurpipe;
using namespace hurpipe::dhs;
using raster::GeoTransform;
using raster::LabelRaster;

namespace {

GeoTransform meters_10() {
    GeoTransform t;
    t.pixel_width = 10.0;
    t.pixel_height = -10.0;
    t.origin_y = 0.0; // rows grow downward from y = 0
    return t;
}

// A 3-class map of non-settlement with selected settlement pixels.
LabelRaster empty_map(std::uint32_t w, std::uint32_t h) {
    return LabelRaster::create(w, h, meters_10(), hur::non_hs, 3);
}

PerturbationModel small_model() {
    PerturbationModel pm;
    pm.urban_rmax = 100.0;
    pm.rural_rmax = 200.0;
    pm.rural_far_rmax = 400.0;
    pm.rural_far_fraction = 0.01;
    pm.distance_floor = 5.0;
    return pm;
}

} // namespace

TEST_CASE("displacement density") {
    PerturbationModel pm; // default radii
    SECTION("outside every radius the density is zero") {
        REQUIRE(displacement_weight(10001.0, hur::rural, pm) == 0.0);
        REQUIRE(displacement_weight(2001.0, hur::urban, pm) == 0.0);
    }
    SECTION("urban density follows the 1/d law exactly") {
        const double half = displacement_weight(1000.0, hur::urban, pm);
        const double full = displacement_weight(2000.0, hur::urban, pm);
        REQUIRE(half == Catch::Approx(2.0 * full).margin(1e-18));
    }
    SECTION("distances below the floor share the floor's density") {
        const double at_floor = displacement_weight(pm.distance_floor, hur::urban, pm);
        REQUIRE(displacement_weight(0.0, hur::urban, pm) == at_floor);
        REQUIRE(displacement_weight(1.0, hur::urban, pm) == at_floor);
    }
    SECTION("rural mixes the near and far radii") {
        // Between the radii only the far component is alive.
        const double between = displacement_weight(6000.0, hur::rural, pm);
        const double expected = pm.rural_far_fraction /
                                (2.0 * std::numbers::pi * 6000.0 * pm.rural_far_rmax);
        REQUIRE(between == Catch::Approx(expected).margin(1e-18));
        const double inside = displacement_weight(1000.0, hur::rural, pm);
        const double near = (1.0 - pm.rural_far_fraction) /
                            (2.0 * std::numbers::pi * 1000.0 * pm.rural_rmax);
        const double far = pm.rural_far_fraction /
                           (2.0 * std::numbers::pi * 1000.0 * pm.rural_far_rmax);
        REQUIRE(inside == Catch::Approx(near + far).margin(1e-18));
    }
    SECTION("invalid radii are rejected") {
        PerturbationModel bad;
        bad.urban_rmax = 5000.0;
        bad.rural_rmax = 2000.0;
        REQUIRE_THROWS_AS(displacement_weight(1.0, hur::urban, bad), ConfigError);
    }
    SECTION("a non-settlement label is rejected") {
        REQUIRE_THROWS_AS(displacement_weight(1.0, hur::non_hs, pm), DataError);
    }
}

TEST_CASE("posterior imputation") {
    const PerturbationModel pm = small_model();

    SECTION("a single settlement pixel in range receives every draw") {
        LabelRaster prior = empty_map(100, 100);
        prior.set(50, 50, hur::urban); // center (505, -505)
        DhsCluster c{"c1", 520.0, -520.0, hur::urban, 2020, "AAA"};
        const ImputationResult r = impute_locations(c, prior, pm, 20, 7);
        REQUIRE(r.draws.size() == 20);
        for (const auto& [x, y] : r.draws) {
            REQUIRE(x == Catch::Approx(505.0));
            REQUIRE(y == Catch::Approx(-505.0));
        }
    }
    SECTION("a degenerate radius collapses onto the containing pixel") {
        LabelRaster prior = empty_map(100, 100);
        prior.set(50, 50, hur::urban);
        prior.set(51, 50, hur::urban);
        PerturbationModel tiny = pm;
        tiny.urban_rmax = 1e-6;
        tiny.rural_rmax = 1e-6;
        tiny.rural_far_rmax = 1e-6;
        DhsCluster c{"c2", 503.0, -504.0, hur::urban, 2020, "AAA"}; // inside (50,50)
        const ImputationResult r = impute_locations(c, prior, tiny, 10, 7);
        for (const auto& [x, y] : r.draws) {
            REQUIRE(x == Catch::Approx(505.0));
            REQUIRE(y == Catch::Approx(-505.0));
        }
    }
    SECTION("draw frequencies follow the 1/d posterior") {
        LabelRaster prior = empty_map(200, 200);
        // Candidates at 50 m and 100 m from the cluster point.
        prior.set(105, 100, hur::urban);
        prior.set(110, 100, hur::urban);
        DhsCluster c{"c3", 1005.0, -1005.0, hur::urban, 2020, "AAA"};
        const ImputationResult r = impute_locations(c, prior, pm, 10000, 99);
        std::size_t near = 0, far = 0;
        for (const auto& [x, y] : r.draws) {
            if (x == Catch::Approx(1055.0)) ++near;
            else if (x == Catch::Approx(1105.0)) ++far;
            else FAIL("draw off the candidate set");
        }
        // Weights 1/50 and 1/100: expect a 2:1 split. Chi-squared, 1 dof.
        const double e_near = 10000.0 * 2.0 / 3.0;
        const double e_far = 10000.0 / 3.0;
        const double chi2 = std::pow(double(near) - e_near, 2) / e_near +
                            std::pow(double(far) - e_far, 2) / e_far;
        REQUIRE(chi2 < 6.635); // p > 0.01
    }
    SECTION("draws depend on the seed but not on call order") {
        LabelRaster prior = empty_map(100, 100);
        prior.set(40, 40, hur::rural);
        prior.set(45, 45, hur::rural);
        DhsCluster c{"c4", 430.0, -430.0, hur::rural, 2020, "AAA"};
        const ImputationResult a = impute_locations(c, prior, pm, 20, 1);
        const ImputationResult b = impute_locations(c, prior, pm, 20, 1);
        REQUIRE(a.draws == b.draws);
        const ImputationResult d = impute_locations(c, prior, pm, 20, 2);
        REQUIRE(a.draws != d.draws);
    }
    SECTION("every draw is a settlement pixel inside the radius") {
        LabelRaster prior = empty_map(120, 120);
        Rng rng(55);
        for (int i = 0; i < 60; ++i)
            prior.set(std::uint32_t(40 + rng.below(40)),
                      std::uint32_t(40 + rng.below(40)),
                      rng.unit() < 0.5 ? hur::rural : hur::urban);
        DhsCluster c{"c5", 600.0, -600.0, hur::rural, 2020, "AAA"};
        const ImputationResult r = impute_locations(c, prior, pm, 200, 3);
        for (const auto& [x, y] : r.draws) {
            const auto [pc, pr] = prior.transform.pixel(x, y);
            const std::int16_t cls =
                prior.at(std::uint32_t(pc), std::uint32_t(pr));
            REQUIRE((cls == hur::rural || cls == hur::urban));
            REQUIRE(std::hypot(x - c.x, y - c.y) <= pm.max_radius(c.label) + 1e-9);
        }
    }
    SECTION("no settlement pixel in range excludes the cluster") {
        LabelRaster prior = empty_map(100, 100);
        DhsCluster c{"c6", 500.0, -500.0, hur::urban, 2020, "AAA"};
        REQUIRE_THROWS_AS(impute_locations(c, prior, pm, 20, 1), NoSettlementError);
    }
    SECTION("a search disk leaving the map is a coverage error") {
        LabelRaster prior = empty_map(20, 20);
        DhsCluster c{"c7", 10.0, -10.0, hur::rural, 2020, "AAA"};
        REQUIRE_THROWS_AS(impute_locations(c, prior, pm, 20, 1), CoverageError);
    }
}

TEST_CASE("majority voting over draws") {
    LabelRaster map3 = empty_map(10, 10);
    // Columns 0-4 urban, 5-9 rural on row 0.
    for (std::uint32_t x = 0; x < 5; ++x) map3.set(x, 0, hur::urban);
    for (std::uint32_t x = 5; x < 10; ++x) map3.set(x, 0, hur::rural);

    const auto at = [&](std::uint32_t x) {
        return map3.transform.world(double(x) + 0.5, 0.5);
    };
    ImputationResult r;
    r.cluster_id = "t";

    SECTION("a strict majority wins") {
        for (int i = 0; i < 12; ++i) r.draws.push_back(at(1)); // urban
        for (int i = 0; i < 8; ++i) r.draws.push_back(at(7));  // rural
        REQUIRE(classify_draws(map3, r, 5) == hur::urban);
    }
    SECTION("ties split deterministically per seed") {
        for (int i = 0; i < 10; ++i) r.draws.push_back(at(1));
        for (int i = 0; i < 10; ++i) r.draws.push_back(at(7));
        const std::int16_t v1 = classify_draws(map3, r, 5);
        REQUIRE(classify_draws(map3, r, 5) == v1);
        REQUIRE((v1 == hur::urban || v1 == hur::rural));
        std::set<std::int16_t> seen;
        for (std::uint64_t seed = 0; seed < 32; ++seed)
            seen.insert(classify_draws(map3, r, seed));
        REQUIRE(seen.size() == 2); // both outcomes occur across seeds
    }
    SECTION("all draws on non-settlement vote non-settlement") {
        for (int i = 0; i < 20; ++i) r.draws.push_back(at(1));
        LabelRaster bare = empty_map(10, 10);
        REQUIRE(classify_draws(bare, r, 5) == hur::non_hs);
    }
    SECTION("a draw off the map is a coverage error") {
        r.draws.push_back({-5000.0, 5000.0});
        REQUIRE_THROWS_AS(classify_draws(map3, r, 5), CoverageError);
    }
}

namespace {

// Two well-separated settlement regions; clusters at their centers.
struct EvalScene {
    LabelRaster truth3 = empty_map(300, 300);
    std::vector<DhsCluster> clusters;

    explicit EvalScene(std::size_t n_clusters) {
        Rng rng(4242);
        for (std::size_t i = 0; i < n_clusters; ++i) {
            // Alternate urban/rural blocks on a coarse lattice, spaced so the
            // 400 m search disks never touch two blocks or leave the map.
            const std::uint32_t bx = 60 + std::uint32_t(i % 4) * 60;
            const std::uint32_t by = 60 + std::uint32_t((i / 4) % 4) * 60;
            const std::int16_t cls = (i % 2 == 0) ? hur::urban : hur::rural;
            for (std::uint32_t y = by; y < by + 8; ++y)
                for (std::uint32_t x = bx; x < bx + 8; ++x) truth3.set(x, y, cls);
            const auto [wx, wy] =
                truth3.transform.world(double(bx) + 4.0 + rng.unit() * 2.0,
                                       double(by) + 4.0 + rng.unit() * 2.0);
            clusters.push_back({"k" + std::to_string(i), wx, wy, cls, 2020,
                                i % 3 == 0 ? "AAA" : "BBB"});
        }
    }
};

} // namespace

TEST_CASE("map evaluation") {
    const PerturbationModel pm = small_model();
    EvalScene scene(16);

    SECTION("a map that encodes the truth scores perfect accuracy and kappa") {
        const DhsReport r = evaluate_maps(scene.clusters, scene.truth3, nullptr,
                                          scene.truth3, pm, 20, 11);
        REQUIRE(r.scored == 16);
        REQUIRE(r.excluded == 0);
        REQUIRE(r.map_a.accuracy == 1.0);
        REQUIRE(r.map_a.kappa == 1.0);
        REQUIRE(r.map_a.per_country.size() == 2);
    }
    SECTION("the comparison is paired: map_b never affects map_a") {
        LabelRaster inverted = scene.truth3;
        for (auto& v : inverted.values)
            if (v == hur::urban) v = hur::rural;
            else if (v == hur::rural) v = hur::urban;
        const DhsReport alone = evaluate_maps(scene.clusters, scene.truth3, nullptr,
                                              scene.truth3, pm, 20, 11);
        const DhsReport paired = evaluate_maps(scene.clusters, scene.truth3, &inverted,
                                               scene.truth3, pm, 20, 11);
        REQUIRE(paired.map_a.accuracy == alone.map_a.accuracy);
        REQUIRE(paired.map_a.cm.counts == alone.map_a.cm.counts);
        REQUIRE(paired.map_b.has_value());
        REQUIRE(paired.map_b->accuracy == 0.0); // fully inverted map
    }
    SECTION("clusters without settlement in range are excluded and reported") {
        std::vector<DhsCluster> with_orphan = scene.clusters;
        with_orphan.push_back({"orphan", 1500.0, -1500.0, hur::urban, 2020, "AAA"});
        const DhsReport r = evaluate_maps(with_orphan, scene.truth3, nullptr,
                                          scene.truth3, pm, 20, 11);
        REQUIRE(r.excluded == 1);
        REQUIRE(r.excluded_ids == std::vector<std::string>{"orphan"});
        REQUIRE(r.scored == 16);
    }
    SECTION("the full evaluation is deterministic in the seed") {
        const DhsReport a = evaluate_maps(scene.clusters, scene.truth3, nullptr,
                                          scene.truth3, pm, 20, 11);
        const DhsReport b = evaluate_maps(scene.clusters, scene.truth3, nullptr,
                                          scene.truth3, pm, 20, 11);
        REQUIRE(a.map_a.cm.counts == b.map_a.cm.counts);
    }
    SECTION("an empty cluster list is rejected") {
        REQUIRE_THROWS_AS(evaluate_maps({}, scene.truth3, nullptr, scene.truth3, pm,
                                        20, 1),
                          EmptyInputError);
    }
}

TEST_CASE("clusters round-trip through CSV") {
    EvalScene scene(5);
    const auto dir = oracles::scratch_dir("dhs_csv");
    write_clusters_csv(scene.clusters, dir / "clusters.csv");
    const auto back = read_clusters_csv(dir / "clusters.csv");
    REQUIRE(back.size() == scene.clusters.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        REQUIRE(back[i].id == scene.clusters[i].id);
        REQUIRE(back[i].x == Catch::Approx(scene.clusters[i].x).margin(1e-6));
        REQUIRE(back[i].label == scene.clusters[i].label);
        REQUIRE(back[i].country == scene.clusters[i].country);
    }
}

TEST_CASE("settlement projection of an 8-class map") {
    LabelRaster land = LabelRaster::create(3, 3, meters_10(), 5, 8);
    land.values = {0, 1, 2, 3, 4, 5, 6, 7, -1};
    const LabelRaster hur3 = settlement_map(land);
    REQUIRE(hur3.values ==
            std::vector<std::int16_t>{0, 0, 0, 0, 0, 0, hur::rural, hur::urban, 0});
    REQUIRE(hur3.num_classes == 3);
}
