#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hurpipe/errors.hpp"
#include "hurpipe/metrics.hpp"
#include "hurpipe/raster.hpp"
#include "hurpipe/rng.hpp"
#include "hurpipe/spatialcv.hpp"

namespace hurpipe::dhs {

using raster::LabelRaster;

// Three-class settlement scheme used by the survey evaluation.
namespace hur {
constexpr std::int16_t non_hs = 0;
constexpr std::int16_t rural = 1;
constexpr std::int16_t urban = 2;
} // namespace hur

// Projects an 8-class land-cover raster onto the 3-class settlement scheme.
inline LabelRaster settlement_map(const LabelRaster& landcover) {
    LabelRaster out = landcover;
    out.num_classes = 3;
    for (auto& v : out.values) {
        if (v == 6) v = hur::rural;
        else if (v == 7) v = hur::urban;
        else v = hur::non_hs;
    }
    return out;
}

// One survey cluster: the privacy-displaced coordinate plus its published
// urban/rural label. Coordinates are in the map's world units.
struct DhsCluster {
    std::string id;
    double x = 0.0;
    double y = 0.0;
    std::int16_t label = hur::rural; // hur::rural or hur::urban
    std::uint16_t year = 0;
    std::string country;
};

// Displacement model: the perturbation picks a uniform angle and a uniform
// radius up to a label-specific maximum; a small fraction of rural clusters
// is displaced up to a larger maximum. Radii are configuration, not data.
struct PerturbationModel {
    double urban_rmax = 2000.0;
    double rural_rmax = 5000.0;
    double rural_far_rmax = 10000.0;
    double rural_far_fraction = 0.01;
    double distance_floor = 5.0; // regularizes the 1/d density near zero

    void validate() const {
        if (!(urban_rmax > 0.0) || !(urban_rmax <= rural_rmax) ||
            !(rural_rmax <= rural_far_rmax))
            throw ConfigError("perturbation radii must satisfy 0 < urban <= rural <= far");
        if (rural_far_fraction < 0.0 || rural_far_fraction > 1.0)
            throw ConfigError("rural_far_fraction must be in [0, 1]");
        if (!(distance_floor > 0.0))
            throw ConfigError("distance floor must be positive");
    }

    double max_radius(std::int16_t label) const {
        return label == hur::urban ? urban_rmax : rural_far_rmax;
    }
};

// Planar density of observing a displacement of length d: uniform angle and
// uniform radius on [0, rmax] give 1/(2*pi*d*rmax) inside the support. The
// rural case mixes the near and far radii. d is floored to keep the density
// bounded at the observed point.
inline double displacement_weight(double d, std::int16_t label,
                                  const PerturbationModel& pm) {
    pm.validate();
    if (d < 0.0 || !std::isfinite(d)) throw DataError("displacement must be non-negative");
    const double df = std::max(d, pm.distance_floor);
    const auto density = [&](double rmax) {
        return df <= rmax ? 1.0 / (2.0 * std::numbers::pi * df * rmax) : 0.0;
    };
    if (label == hur::urban) return density(pm.urban_rmax);
    if (label == hur::rural)
        return (1.0 - pm.rural_far_fraction) * density(pm.rural_rmax) +
               pm.rural_far_fraction * density(pm.rural_far_rmax);
    throw DataError("displacement weight needs an urban or rural label");
}

// Posterior draws of a cluster's unperturbed location.
struct ImputationResult {
    std::string cluster_id;
    std::vector<std::pair<double, double>> draws; // world coordinates
    std::uint64_t seed = 0;
};

// Samples n plausible unperturbed locations: candidates are the settlement
// pixels of the prior map within the label's maximum displacement radius,
// weighted by the displacement density at their center; draws are taken with
// replacement in proportion to weight. Each cluster derives its own stream
// from (seed, cluster id), so results do not depend on processing order.
inline ImputationResult impute_locations(const DhsCluster& cluster,
                                         const LabelRaster& prior_map,
                                         const PerturbationModel& pm,
                                         std::size_t n, std::uint64_t seed) {
    pm.validate();
    prior_map.validate();
    if (n == 0) throw ConfigError("need at least one draw");
    const double rmax = pm.max_radius(cluster.label);

    // The whole search disk must be on the map.
    const auto [cmin, rmin] = prior_map.transform.pixel(cluster.x - rmax, cluster.y + rmax);
    const auto [cmax, rmax_px] = prior_map.transform.pixel(cluster.x + rmax, cluster.y - rmax);
    const double lo_c = std::min(cmin, cmax), hi_c = std::max(cmin, cmax);
    const double lo_r = std::min(rmin, rmax_px), hi_r = std::max(rmin, rmax_px);
    if (lo_c < -1e-9 || lo_r < -1e-9 || hi_c > double(prior_map.width) + 1e-9 ||
        hi_r > double(prior_map.height) + 1e-9)
        throw CoverageError("prior map does not cover the search disk of cluster " +
                            cluster.id);

    const auto x0 = std::uint32_t(std::max<std::int64_t>(0, std::int64_t(std::floor(lo_c))));
    const auto y0 = std::uint32_t(std::max<std::int64_t>(0, std::int64_t(std::floor(lo_r))));
    const auto x1 = std::uint32_t(std::min<std::int64_t>(prior_map.width,
                                                         std::int64_t(std::ceil(hi_c))));
    const auto y1 = std::uint32_t(std::min<std::int64_t>(prior_map.height,
                                                         std::int64_t(std::ceil(hi_r))));

    const auto [obs_c, obs_r] = prior_map.transform.pixel(cluster.x, cluster.y);
    const auto obs_x = std::int64_t(std::floor(obs_c));
    const auto obs_y = std::int64_t(std::floor(obs_r));

    std::vector<std::pair<double, double>> points;
    std::vector<double> cumulative;
    double total = 0.0;
    bool have_containing = false;
    std::pair<double, double> containing_pt{0.0, 0.0};
    for (std::uint32_t y = y0; y < y1; ++y) {
        for (std::uint32_t x = x0; x < x1; ++x) {
            const std::int16_t c = prior_map.at(x, y);
            if (c != hur::rural && c != hur::urban) continue;
            const auto [wx, wy] =
                prior_map.transform.world(double(x) + 0.5, double(y) + 0.5);
            const double d = std::hypot(wx - cluster.x, wy - cluster.y);
            const bool contains =
                std::int64_t(x) == obs_x && std::int64_t(y) == obs_y;
            if (contains) {
                have_containing = true;
                containing_pt = {wx, wy};
            }
            if (d > rmax) continue;
            const double w = displacement_weight(d, cluster.label, pm);
            if (w <= 0.0) continue;
            points.emplace_back(wx, wy);
            total += w;
            cumulative.push_back(total);
        }
    }
    // Degenerate radius: all density collapses onto the pixel holding the
    // observed point, provided it is a settlement pixel.
    if (total <= 0.0) {
        if (!have_containing)
            throw NoSettlementError("no settlement pixel within " +
                                    std::to_string(rmax) + " m of cluster " + cluster.id);
        points = {containing_pt};
        cumulative = {1.0};
        total = 1.0;
    }

    ImputationResult out;
    out.cluster_id = cluster.id;
    out.seed = seed;
    Rng rng(derive_seed({seed, 0xD45D1ull, hash_bytes(cluster.id)}));
    out.draws.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = rng.unit() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
        const std::size_t idx =
            std::min(points.size() - 1, std::size_t(it - cumulative.begin()));
        out.draws.push_back(points[idx]);
    }
    return out;
}

// Majority vote over the map's classes at the draw locations; ties are split
// by a seeded random pick among the tied classes.
inline std::int16_t classify_draws(const LabelRaster& map3,
                                   const ImputationResult& result, std::uint64_t seed) {
    if (result.draws.empty()) throw EmptyInputError("imputation has no draws");
    std::array<std::size_t, 3> votes{0, 0, 0};
    for (const auto& [wx, wy] : result.draws) {
        const auto [pc, pr] = map3.transform.pixel(wx, wy);
        const auto x = std::int64_t(std::floor(pc));
        const auto y = std::int64_t(std::floor(pr));
        if (x < 0 || y < 0 || x >= std::int64_t(map3.width) || y >= std::int64_t(map3.height))
            throw CoverageError("draw for cluster " + result.cluster_id +
                                " falls outside the map");
        const std::int16_t c = map3.at(std::uint32_t(x), std::uint32_t(y));
        if (c < 0 || c > 2)
            throw DataError("map under test is not in the 3-class settlement scheme");
        ++votes[std::size_t(c)];
    }
    const std::size_t best = std::max(votes[0], std::max(votes[1], votes[2]));
    std::vector<std::int16_t> tied;
    for (std::int16_t c = 0; c < 3; ++c)
        if (votes[std::size_t(c)] == best) tied.push_back(c);
    if (tied.size() == 1) return tied.front();
    Rng rng(derive_seed({seed, 0x11E5ull, hash_bytes(result.cluster_id)}));
    return tied[std::size_t(rng.below(tied.size()))];
}

struct MapEvaluation {
    double accuracy = 0.0;
    double kappa = 0.0;
    metrics::ConfusionMatrix cm{3}; // rows = survey label, cols = voted class
    std::map<std::string, metrics::ConfusionMatrix> per_country;
};

struct DhsReport {
    MapEvaluation map_a;
    std::optional<MapEvaluation> map_b;
    std::uint64_t scored = 0;
    std::uint64_t excluded = 0;
    std::vector<std::string> excluded_ids;
};

// Paired comparison of one or two maps against the survey labels: the same
// posterior draws are reused for both maps, a cluster with no settlement
// pixel in range is excluded from both, and a non-settlement majority vote
// counts as a misclassification.
inline DhsReport evaluate_maps(std::span<const DhsCluster> clusters,
                               const LabelRaster& map_a, const LabelRaster* map_b,
                               const LabelRaster& prior_map,
                               const PerturbationModel& pm, std::size_t n_draws,
                               std::uint64_t seed) {
    if (clusters.empty()) throw EmptyInputError("no clusters to evaluate");
    DhsReport report;
    if (map_b) report.map_b.emplace();

    const auto score = [](MapEvaluation& eval, const DhsCluster& c, std::int16_t voted) {
        ++eval.cm.at(std::uint32_t(c.label), std::uint32_t(voted));
        auto [it, inserted] =
            eval.per_country.try_emplace(c.country, metrics::ConfusionMatrix{3});
        ++it->second.at(std::uint32_t(c.label), std::uint32_t(voted));
    };

    for (const auto& c : clusters) {
        if (c.label != hur::rural && c.label != hur::urban)
            throw DataError("cluster " + c.id + " must be labelled urban or rural");
        ImputationResult imp;
        try {
            imp = impute_locations(c, prior_map, pm, n_draws, seed);
        } catch (const NoSettlementError&) {
            ++report.excluded;
            report.excluded_ids.push_back(c.id);
            continue;
        }
        ++report.scored;
        score(report.map_a, c, classify_draws(map_a, imp, seed));
        if (map_b) score(*report.map_b, c, classify_draws(*map_b, imp, seed));
    }
    if (report.scored == 0)
        throw EmptyInputError("every cluster was excluded; nothing to evaluate");

    const auto finish = [](MapEvaluation& eval) {
        eval.accuracy = metrics::accuracy(eval.cm);
        eval.kappa = metrics::cohen_kappa(eval.cm);
    };
    finish(report.map_a);
    if (report.map_b) finish(*report.map_b);
    return report;
}

// ---------------------------------------------------------------------------
// CSV / JSON interchange
// ---------------------------------------------------------------------------

inline std::int16_t settlement_label_from_string(const std::string& s) {
    if (s == "urban") return hur::urban;
    if (s == "rural") return hur::rural;
    throw DataError("cluster label must be 'urban' or 'rural', got '" + s + "'");
}

inline std::string settlement_label_to_string(std::int16_t label) {
    switch (label) {
        case hur::urban: return "urban";
        case hur::rural: return "rural";
        case hur::non_hs: return "nonHS";
    }
    throw DataError("unknown settlement label " + std::to_string(label));
}

// Expects a header line "id,lon,lat,label,year,country".
inline std::vector<DhsCluster> read_clusters_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open clusters file: " + path.string());
    std::vector<DhsCluster> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = spatialcv::detail::split_csv_line(line);
        if (first) {
            first = false;
            if (!fields.empty() && fields[0] == "id") continue;
        }
        if (fields.size() != 6)
            throw DataError("cluster row needs id,lon,lat,label,year,country: " + line);
        DhsCluster c;
        c.id = fields[0];
        try {
            c.x = std::stod(fields[1]);
            c.y = std::stod(fields[2]);
            c.year = std::uint16_t(std::stoul(fields[4]));
        } catch (const std::exception&) {
            throw DataError("bad numeric value in cluster row: " + line);
        }
        if (!std::isfinite(c.x) || !std::isfinite(c.y))
            throw DataError("cluster coordinates must be finite: " + line);
        c.label = settlement_label_from_string(fields[3]);
        c.country = fields[5];
        out.push_back(std::move(c));
    }
    return out;
}

inline void write_clusters_csv(std::span<const DhsCluster> clusters,
                               const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write clusters file: " + path.string());
    out << "id,lon,lat,label,year,country\n";
    out.precision(12);
    for (const auto& c : clusters)
        out << c.id << ',' << c.x << ',' << c.y << ','
            << settlement_label_to_string(c.label) << ',' << c.year << ',' << c.country
            << '\n';
}

inline void to_json(nlohmann::json& j, const MapEvaluation& e) {
    nlohmann::json per_country = nlohmann::json::object();
    for (const auto& [country, cm] : e.per_country) {
        per_country[country] = {{"accuracy", metrics::accuracy(cm)},
                                {"kappa", metrics::cohen_kappa(cm)},
                                {"n", cm.total()}};
    }
    j = {{"accuracy", e.accuracy},
         {"kappa", e.kappa},
         {"confusion", e.cm},
         {"per_country", per_country}};
}

inline void to_json(nlohmann::json& j, const DhsReport& r) {
    j = {{"map_a", r.map_a},
         {"scored", r.scored},
         {"excluded", r.excluded},
         {"excluded_ids", r.excluded_ids}};
    if (r.map_b) j["map_b"] = *r.map_b;
}

} // namespace hurpipe::dhs
